"""Attach a dictionary-width FC head to a CNN and expose its activations.

The head ("SDFC") is a single fully connected layer whose output width
equals H*W of the selected feature-map layer, so the produced feature
vector can be fit by the flattened feature-map dictionary downstream.
Attaching it does not touch the backbone weights; fine-tuning, when
wanted, is the caller's own training script. Checkpoints that already
contain the augmented model are loaded as-is after a width check.
"""

from __future__ import annotations

import torch
from torch import nn


class ExtractorError(Exception):
    """Base class for extraction failures."""


class LayerNotFound(ExtractorError):
    pass


class SdfcWidthMismatch(ExtractorError):
    pass


class SdfcModel(nn.Module):
    """Backbone plus dictionary-width FC head.

    forward() returns (feature_map, feature_vector) for a single image
    batch: the selected layer's activation (K, H, W) and the head output
    of length H*W.
    """

    def __init__(self, backbone: nn.Module, layer_name: str,
                 input_size: tuple[int, int] = (84, 84), seed: int = 0):
        super().__init__()
        self.backbone = backbone
        self.layer_name = layer_name
        self.input_size = tuple(input_size)
        self._captured = None

        layer = _resolve_layer(backbone, layer_name)
        layer.register_forward_hook(self._capture)

        k, h, w, flat_dim = self._probe()
        self.map_shape = (k, h, w)
        torch.manual_seed(seed)  # deterministic head init
        self.sdfc = nn.Linear(flat_dim, h * w)

    def _capture(self, module, inputs, output):
        self._captured = output

    def _probe(self) -> tuple[int, int, int, int]:
        self.backbone.eval()
        with torch.no_grad():
            dummy = torch.zeros(1, 3, self.input_size[1], self.input_size[0])
            out = self.backbone(dummy)
        fmap = self._captured
        if fmap is None or fmap.dim() != 4:
            got = "nothing" if fmap is None else f"rank-{fmap.dim()} output"
            raise LayerNotFound(
                f"layer {self.layer_name!r} must produce a batched rank-3 "
                f"activation, captured {got}")
        _, k, h, w = fmap.shape
        return k, h, w, out.reshape(1, -1).shape[1]

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if image.dim() != 4 or image.shape[0] != 1:
            raise ExtractorError(f"expected a (1, 3, H, W) batch, got {tuple(image.shape)}")
        self._captured = None
        out = self.backbone(image)
        fmap = self._captured[0]
        fvec = self.sdfc(out.reshape(1, -1))[0]
        return fmap, fvec


def _resolve_layer(model: nn.Module, name: str) -> nn.Module:
    try:
        return model.get_submodule(name)
    except AttributeError as exc:
        raise LayerNotFound(f"no submodule {name!r} in the model") from exc


def attach_sdfc(model: nn.Module, layer_name: str,
                input_size: tuple[int, int] = (84, 84),
                sdfc_width: int | None = None) -> tuple[SdfcModel, tuple[int, int, int]]:
    """Wrap a backbone with the dictionary-width head.

    If the model is already augmented, it is verified and reused. An
    explicit sdfc_width that disagrees with H*W of the selected layer is a
    hard error, raised before anything is exported.
    """
    if isinstance(model, SdfcModel):
        if layer_name and layer_name != model.layer_name:
            raise LayerNotFound(
                f"checkpoint already selects layer {model.layer_name!r}; "
                f"cannot switch to {layer_name!r}")
        augmented = model
    else:
        augmented = SdfcModel(model, layer_name, input_size=input_size)

    k, h, w = augmented.map_shape
    if augmented.sdfc.out_features != h * w:
        raise SdfcWidthMismatch(
            f"head width {augmented.sdfc.out_features} != H*W = {h * w}")
    if sdfc_width is not None and sdfc_width != h * w:
        raise SdfcWidthMismatch(
            f"configured width {sdfc_width} != H*W = {h * w} "
            f"of layer {augmented.layer_name!r}")
    augmented.eval()
    return augmented, (k, h, w)


def load_model(path) -> nn.Module:
    # checkpoints are trusted local artifacts; full-module pickles need
    # weights_only=False on current torch
    return torch.load(path, map_location="cpu", weights_only=False)
