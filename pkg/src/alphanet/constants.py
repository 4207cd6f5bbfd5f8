"""Published reference Top-1 accuracies for the full-scale Alpha-Net
models.

These are reference metadata only: they were measured on a private
large-scale corpus and are NOT reproducible at desk scale.  Result rows
carry them in the ``paper_ref_top1`` column, clearly labeled
"reference, not reproduced".
"""

__all__ = [
    "STRUCTURE_REFERENCE",
    "LOSS_REFERENCE",
    "NORMALIZATION_REFERENCE",
    "ARCHITECTURE_REFERENCE",
    "reference_top1",
    "REFERENCE_NOTE",
]

REFERENCE_NOTE = "reference, not reproduced"

# version -> structure -> Top-1 (%)
STRUCTURE_REFERENCE = {
    "v1": {"plain": 75.1, "residual": 78.2, "alpha": 79.0},
    "v2": {"plain": 76.2, "residual": 76.3, "alpha": 79.2},
    "v3": {"plain": 76.3, "residual": 76.5, "alpha": 79.5},
    "v4": {"plain": 72.1, "residual": 76.1, "alpha": 77.5},
}

# version -> loss kind -> Top-1 (%)
LOSS_REFERENCE = {
    "v1": {"softmax": 72.1, "am_softmax": 74.3, "am_softmax_linear": 76.2},
    "v2": {"softmax": 71.3, "am_softmax": 74.3, "am_softmax_linear": 77.1},
    "v3": {"softmax": 72.1, "am_softmax": 74.3, "am_softmax_linear": 77.2},
    "v4": {"softmax": 71.2, "am_softmax": 73.1, "am_softmax_linear": 75.1},
}

# version -> normalization -> Top-1 (%)
NORMALIZATION_REFERENCE = {
    "v1": {"log": 69.2, "zscore": 71.2, "alpha": 71.0},
    "v2": {"log": 69.5, "zscore": 70.1, "alpha": 71.2},
    "v3": {"log": 70.1, "zscore": 70.1, "alpha": 71.5},
    "v4": {"log": 71.2, "zscore": 69.5, "alpha": 70.5},
}

# overall benchmark comparison, architecture name -> Top-1 (%)
ARCHITECTURE_REFERENCE = {
    "Xception": 79.0,
    "Inception v3": 78.8,
    "ResNet 50": 75.9,
    "VGG 19": 72.7,
    "VGG 16": 71.5,
    "InceptionResNet v2": 80.4,
    "Alpha-Net v1": 78.2,
    "Alpha-Net v2": 79.1,
    "Alpha-Net v3": 79.5,
    "Alpha-Net v4": 78.3,
}

VERSION_LAYER_COUNTS = {"v1": 128, "v2": 256, "v3": 512, "v4": 1024}


def reference_top1(version, axis="structure", value="alpha"):
    """Look up the published reference accuracy for one grid cell.

    axis selects the comparison table ('structure', 'loss',
    'normalization'); value is the cell within the version's row.
    Returns None for unknown cells.
    """
    table = {
        "structure": STRUCTURE_REFERENCE,
        "loss": LOSS_REFERENCE,
        "normalization": NORMALIZATION_REFERENCE,
    }.get(axis)
    if table is None:
        return None
    return table.get(version, {}).get(value)
