"""Radar and satellite precipitation nowcasting (C++ core)."""

from ._nowcast import (
    MISSING,
    Error,
    FormatError,
    IoError,
    TrainingError,
    UNet,
    ValidationError,
    __version__,
    categorize,
    category_bounds,
    contingency,
    csi,
    denormalize_rate,
    format_report,
    fss,
    fss_bruteforce,
    normalize_rate,
    preprocess,
    read_grid,
    render_map,
    synthetic_frames,
    write_grid,
    write_synthetic,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
