"""Bright-field single-cell classification benchmark.

Training uses bright-field images expanded by seeded augmentations plus
injected nuclear-stain (DAPI) images; validation and test use the primary
channel only. The package ships its own split protocol, a synthetic data
generator with a planted class signal, a residual-CNN trainer, an ablation
harness, and from-scratch small-sample statistics.
"""

__version__ = "0.1.0"

from ctcbench.manifest import CellRecord, Label, Manifest, Provenance, load_manifest
from ctcbench.splitting import DatasetSplit, SplitMode, SplitPolicy, make_split, split_report

__all__ = [
    "CellRecord",
    "Label",
    "Manifest",
    "Provenance",
    "load_manifest",
    "DatasetSplit",
    "SplitMode",
    "SplitPolicy",
    "make_split",
    "split_report",
    "__version__",
]
