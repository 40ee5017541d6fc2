"""Lesion class templates and caption construction.

The class table is our own: each class fixes a symmetry level, a border
irregularity, a color set and a set of dermoscopic structures. Classes past
the eight base templates are combinatorial fills (a base template with one
structure toggled).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from medgrad.errors import CaptionParseError, ContractError

COLORS = ("light-brown", "dark-brown", "blue-gray", "black", "red", "white")
STRUCTURES = ("streaks", "dots", "pigment-network", "blue-whitish-veil", "regression")
MAX_CLASSES = 17
DEFAULT_CLASSES = 8

SYMMETRY_TERMS = {2: "fully symmetric", 1: "symmetry in 1 axis", 0: "asymmetric"}
IRREGULAR_BORDER_AT = 0.3
COLOR_TERMS = {
    "light-brown": "light brown",
    "dark-brown": "dark brown",
    "blue-gray": "blue gray",
    "black": "black",
    "red": "red",
    "white": "white",
}
STRUCTURE_TERMS = {
    "streaks": "streaks",
    "dots": "dots",
    "pigment-network": "pigment network",
    "blue-whitish-veil": "blue-whitish veil",
    "regression": "regression",
}


@dataclass(frozen=True)
class ClassTemplate:
    name: str
    symmetry_axes: int
    border_irregularity: float
    colors: tuple[str, ...]
    structures: tuple[str, ...]


@dataclass(frozen=True)
class LesionSpec:
    class_id: int
    class_name: str
    symmetry_axes: int
    border_irregularity: float
    colors: tuple[str, ...]
    structures: tuple[str, ...]
    lesion_radius_fraction: float = 0.25

    def __post_init__(self):
        if self.symmetry_axes not in (0, 1, 2):
            raise ContractError(f"symmetry_axes must be 0, 1 or 2, got {self.symmetry_axes}")
        if not 0.0 <= self.border_irregularity <= 1.0:
            raise ContractError(f"border_irregularity must lie in [0, 1], got {self.border_irregularity}")
        if not 0.1 < self.lesion_radius_fraction < 0.45:
            raise ContractError(f"lesion_radius_fraction must lie in (0.1, 0.45), got {self.lesion_radius_fraction}")
        if not self.colors:
            raise ContractError("a lesion needs at least one color")
        for c in self.colors:
            if c not in COLORS:
                raise ContractError(f"unknown color {c!r}")
        for s in self.structures:
            if s not in STRUCTURES:
                raise ContractError(f"unknown structure {s!r}")

    @property
    def criteria(self) -> list[str]:
        return criteria_terms(self.symmetry_axes, self.border_irregularity, self.colors, self.structures)

    @property
    def caption(self) -> str:
        return ", ".join([self.class_name, *self.criteria])


BASE_TEMPLATES: tuple[ClassTemplate, ...] = (
    ClassTemplate("common nevus", 2, 0.05, ("light-brown",), ("pigment-network",)),
    ClassTemplate("atypical nevus", 1, 0.45, ("light-brown", "dark-brown"), ("dots",)),
    ClassTemplate("melanoma", 0, 0.7, ("dark-brown", "black", "blue-gray"), ("streaks", "blue-whitish-veil")),
    ClassTemplate("blue nevus", 2, 0.1, ("blue-gray",), ()),
    ClassTemplate("spitz nevus", 2, 0.2, ("black", "dark-brown"), ("streaks",)),
    ClassTemplate("seborrheic keratosis", 1, 0.15, ("dark-brown", "white"), ("regression",)),
    ClassTemplate("vascular lesion", 2, 0.1, ("red",), ("dots",)),
    ClassTemplate("melanoma in situ", 0, 0.55, ("light-brown", "dark-brown", "black"), ("pigment-network", "regression")),
)


def class_templates(k: int = DEFAULT_CLASSES) -> list[ClassTemplate]:
    if not 1 <= k <= MAX_CLASSES:
        raise ContractError(f"number of classes must lie in [1, {MAX_CLASSES}], got {k}")
    out = list(BASE_TEMPLATES[:k])
    n_base = len(BASE_TEMPLATES)
    for i in range(n_base, k):
        base = BASE_TEMPLATES[(i - n_base) % n_base]
        toggled = STRUCTURES[i % len(STRUCTURES)]
        if toggled == "blue-whitish-veil" and "white" in base.colors:
            # a pale veil over a white lesion washes out the lesion/skin contrast
            toggled = STRUCTURES[(i + 1) % len(STRUCTURES)]
        if toggled in base.structures:
            structures = tuple(s for s in base.structures if s != toggled)
        else:
            structures = tuple(s for s in STRUCTURES if s in base.structures or s == toggled)
        out.append(replace(base, name=f"{base.name} variant {(i - n_base) // n_base + 1}", structures=structures))
    return out


def criteria_terms(symmetry_axes: int, border_irregularity: float, colors, structures) -> list[str]:
    border = "irregular border" if border_irregularity >= IRREGULAR_BORDER_AT else "regular border"
    return [
        SYMMETRY_TERMS[symmetry_axes],
        border,
        *(COLOR_TERMS[c] for c in colors),
        *(STRUCTURE_TERMS[s] for s in structures),
    ]


def template_caption(t: ClassTemplate) -> str:
    """Canonical caption of a class: its name then every criterion term."""
    return ", ".join([t.name, *criteria_terms(t.symmetry_axes, t.border_irregularity, t.colors, t.structures)])


def parse_caption(caption: str) -> tuple[str, list[str]]:
    """Split ``"class, c1, c2"`` into the class name and criteria terms."""
    parts = [p.strip() for p in caption.split(",")]
    if not parts or any(not p for p in parts):
        raise CaptionParseError(f"caption {caption!r} is not of the form 'class, criterion, ...'")
    return parts[0], parts[1:]
