"""Bundled example models.

Each fixture is a linear SEM stored as a text file next to this module. The
structural facts each example is meant to illustrate are re-checked with the
d-separation oracle whenever a fixture is loaded, so a corrupted or edited
file fails loudly instead of silently changing what the tests exercise.
"""

from __future__ import annotations

import itertools
from importlib import resources

from .errors import InputError
from .graphs import TrueDag, d_separated, node_separates_all_pairs, one_factor_submodels
from .sem import LinearSem, sem_from_text

FIXTURES = ("fig2", "fig3", "fig4", "fig5", "fig5_no_y7", "fig6", "fig7", "bollen")


def fixture_names() -> tuple[str, ...]:
    return FIXTURES


def fixture_text(name: str) -> str:
    if name not in FIXTURES:
        raise InputError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    return resources.files(__package__).joinpath("fixtures", f"{name}.sem").read_text()


def load_fixture(name: str) -> LinearSem:
    m = sem_from_text(fixture_text(name))
    problems = fixture_problems(name, m.graph)
    if problems:
        raise InputError(f"fixture {name} fails its structural checks: {'; '.join(problems)}")
    return m


def _separates(g: TrueDag, x: str, ys) -> bool:
    return all(d_separated(g, a, b, (x,)) for a, b in itertools.combinations(ys, 2))


def _share_parent(g: TrueDag, a: str, b: str) -> bool:
    return bool(set(g.parents(a)) & set(g.parents(b)))


def fixture_problems(name: str, g: TrueDag) -> list[str]:
    """Failed structural facts for fixture ``name`` (empty when all hold)."""
    out: list[str] = []

    def need(cond: bool, msg: str) -> None:
        if not cond:
            out.append(msg)

    if name == "fig2":
        subs = one_factor_submodels(g)
        need(("X1", ("Y1", "Y2", "Y3", "Y5")) in subs, "X1 must separate Y1, Y2, Y3, Y5")
        need(("X2", ("Y1", "Y4", "Y5", "Y6")) in subs, "X2 must separate Y1, Y4, Y5, Y6")
        need(not any(x in ("X3", "X4") for x, _ in subs), "X3 and X4 must have no one-factor submodel")
    elif name == "fig3":
        need(node_separates_all_pairs(g, "X1", ("Y1", "Y2", "Y3", "Y4")), "X1 must separate Y1..Y4")
        need("X1" not in g.ancestors("Y4"), "X1 must not cause Y4")
    elif name == "fig4":
        need(node_separates_all_pairs(g, "X2", ("Y1", "Y3", "Y4", "Y5")), "X2 must separate Y1, Y3, Y4, Y5")
        need(not d_separated(g, "Y1", "Y2", ("X2",)), "X2 must not separate Y1 and Y2")
    elif name in ("fig5", "fig5_no_y7"):
        need(set(g.parents("Y4")) == {"X1", "X2"}, "Y4 must have parents X1 and X2")
        need(node_separates_all_pairs(g, "X1", ("Y1", "Y2", "Y3", "Y4")), "X1 must separate Y1..Y4")
        kids = [y for y in g.children("X2") if not g.is_latent(y)]
        if name == "fig5":
            need(node_separates_all_pairs(g, "X2", ("Y4", "Y5", "Y6", "Y7")), "X2 must separate Y4..Y7")
        else:
            need(len(kids) == 3, "X2 must have exactly three indicators")
    elif name == "fig6":
        for y in ("Y4", "Y5"):
            need(set(g.parents(y)) == {"X1", "X2"}, f"{y} must have parents X1 and X2")
        need(_separates(g, "X1", ("Y1", "Y2", "Y3", "Y4")), "X1 must separate Y1..Y4")
        need(_separates(g, "X2", ("Y5", "Y6", "Y7", "Y8")), "X2 must separate Y5..Y8")
    elif name == "fig7":
        need(node_separates_all_pairs(g, "X2", ("Y4", "Y5", "Y6", "Y7")), "X2 must separate Y4..Y7")
        need(node_separates_all_pairs(g, "X2", ("Y5", "Y6", "Y7", "Y8")), "X2 must separate Y5..Y8")
        need(not _share_parent(g, "Y4", "Y8"), "Y4 and Y8 must not share a parent")
    elif name == "bollen":
        need(len(g.observed) == 11, "expected eleven indicators")
    return out
