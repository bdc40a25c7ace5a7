"""Winning-subnetwork continual learning: python bindings for the C++ core."""

try:
    from . import _core  # installed package layout (scikit-build-core)
except ImportError:  # build-tree layout: _core.so sits on PYTHONPATH
    import _core

mix_seed = _core.mix_seed
topc_mask = _core.topc_mask
accumulate_masks = _core.accumulate_masks
encode_roundtrip = _core.encode_roundtrip
capacity = _core.capacity
mask_correlation = _core.mask_correlation
metrics = _core.metrics
run_til_synth = _core.run_til_synth
run_fscil_synth = _core.run_fscil_synth
ConfigError = _core.ConfigError
IntegrityError = _core.IntegrityError

__all__ = [
    "mix_seed",
    "topc_mask",
    "accumulate_masks",
    "encode_roundtrip",
    "capacity",
    "mask_correlation",
    "metrics",
    "run_til_synth",
    "run_fscil_synth",
    "ConfigError",
    "IntegrityError",
]
