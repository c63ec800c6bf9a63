"""Python surface for the xtra core: masks, numeric kernels, data, cost."""

try:
    from . import _core  # installed layout: the module lives inside the package
except ImportError:  # build-tree layout: the module sits on PYTHONPATH
    import _core

ContractError = _core.ContractError
FormatError = _core.FormatError
MaskError = _core.MaskError
ShapeError = _core.ShapeError
block_causal_mask = _core.block_causal_mask
estimate_cost = _core.estimate_cost
gelu = _core.gelu
layer_norm = _core.layer_norm
lr_at = _core.lr_at
make_block_order = _core.make_block_order
masked_softmax = _core.masked_softmax
matmul = _core.matmul
normalize_blocks = _core.normalize_blocks
reconstruction_loss = _core.reconstruction_loss
save_xid = _core.save_xid
synth_dataset = _core.synth_dataset
token_to_block = _core.token_to_block

__all__ = [
    "ContractError",
    "FormatError",
    "MaskError",
    "ShapeError",
    "block_causal_mask",
    "estimate_cost",
    "gelu",
    "layer_norm",
    "lr_at",
    "make_block_order",
    "masked_softmax",
    "matmul",
    "normalize_blocks",
    "reconstruction_loss",
    "save_xid",
    "synth_dataset",
    "token_to_block",
]
