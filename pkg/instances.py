# instances.py
# Instance I/O (UAI MARKOV files, native JSON) and the synthetic Potts generator

import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from core.errors import ConfigError, FormatError, ModelError
from core.model import Model

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-300
# energies that round-trip through exp(-theta) and the floor above
MAX_UAI_ENERGY = -float(np.log(PROBABILITY_FLOOR))
MIN_UAI_ENERGY = -float(np.log(np.finfo(np.float64).max))
UAI = "uai"
NATIVE = "native"
FORMATS = (UAI, NATIVE)


# ==================================================================================
# UAI
# ==================================================================================

class _Tokens:
    """Whitespace token stream with position-aware errors."""

    def __init__(self, text):
        self.items = text.split()
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.items):
            raise FormatError(f"unexpected end of file while reading {what}")
        token = self.items[self.pos]
        self.pos += 1
        return token

    def integer(self, what, factor_index=None):
        token = self.next(what)
        try:
            return int(token)
        except ValueError:
            raise FormatError(f"expected an integer for {what}, got {token!r}", factor_index) from None

    def real(self, what, factor_index=None):
        token = self.next(what)
        try:
            return float(token)
        except ValueError:
            raise FormatError(f"expected a number for {what}, got {token!r}", factor_index) from None


def parse_uai(text: str) -> Model:
    """
    Parse the pairwise subset of the UAI MARKOV format.

    Table values v become energies -log(max(v, 1e-300)). A pairwise table is
    read row-major with the first variable of its scope as the row.
    Repeated factors over the same scope are summed in energy space.

    Raises:
        FormatError: on a malformed preamble, a non-numeric token, a factor of
                     arity other than 1 or 2, or a table of the wrong size
    """
    tokens = _Tokens(text)
    kind = tokens.next("the preamble")
    if kind.upper() != "MARKOV":
        raise FormatError(f"only MARKOV networks are supported, got {kind!r}")
    num_vars = tokens.integer("the variable count")
    if num_vars < 1:
        raise FormatError(f"variable count must be positive, got {num_vars}")
    cards = [tokens.integer(f"the cardinality of variable {v}") for v in range(num_vars)]
    if any(k < 1 for k in cards):
        raise FormatError("every cardinality must be at least 1")

    num_factors = tokens.integer("the factor count")
    scopes = []
    for f in range(num_factors):
        arity = tokens.integer("the factor arity", f)
        if arity not in (1, 2):
            raise FormatError(f"arity {arity} is not supported (only unary and pairwise factors)", f)
        scope = [tokens.integer("a scope variable", f) for _ in range(arity)]
        for v in scope:
            if not 0 <= v < num_vars:
                raise FormatError(f"variable {v} does not exist", f)
        if arity == 2 and scope[0] == scope[1]:
            raise FormatError(f"pairwise factor over variable {scope[0]} twice", f)
        scopes.append(scope)

    unaries = [np.zeros(k) for k in cards]
    pairwise = {}
    for f, scope in enumerate(scopes):
        size = tokens.integer("the table size", f)
        expected = int(np.prod([cards[v] for v in scope]))
        if size != expected:
            raise FormatError(f"table has {size} entries, scope needs {expected}", f)
        values = np.array([tokens.real("a table entry", f) for _ in range(size)])
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise FormatError("table entries must be finite and nonnegative", f)
        theta = -np.log(np.maximum(values, PROBABILITY_FLOOR))
        if len(scope) == 1:
            unaries[scope[0]] += theta
            continue
        a, b = scope
        table = theta.reshape(cards[a], cards[b])
        if a > b:
            a, b, table = b, a, table.T
        pairwise[(a, b)] = pairwise.get((a, b), 0.0) + table

    if tokens.pos != len(tokens.items):
        logger.warning("ignoring %d trailing token(s) in UAI input", len(tokens.items) - tokens.pos)
    try:
        return Model.create(cards, unaries, [(i, j, t) for (i, j), t in sorted(pairwise.items())])
    except ModelError as e:
        raise FormatError(str(e)) from e


def _format_values(values):
    return " ".join(f"{v:.17g}" for v in values)


def _check_uai_range(theta, factor):
    # exp(-theta) must stay finite and survive the parse floor unchanged
    if not np.all(np.isfinite(theta)) or np.any(theta > MAX_UAI_ENERGY) or np.any(theta <= MIN_UAI_ENERGY):
        raise FormatError(f"energies must lie in ({MIN_UAI_ENERGY:.6g}, {MAX_UAI_ENERGY:.6g}] "
                          f"to be written as UAI, got [{np.min(theta):.6g}, {np.max(theta):.6g}]", factor)


def emit_uai(model: Model) -> str:
    """
    UAI MARKOV text with one unary factor per node followed by one factor per edge.

    Raises:
        FormatError: when an energy has no probability that reads back to it
    """
    for node, theta in enumerate(model.unaries):
        _check_uai_range(theta, node)
    for e, edge in enumerate(model.edges):
        _check_uai_range(edge.table, model.num_nodes + e)

    lines = ["MARKOV", str(model.num_nodes), " ".join(str(k) for k in model.cardinalities),
             str(model.num_nodes + model.num_edges)]
    lines += [f"1 {node}" for node in range(model.num_nodes)]
    lines += [f"2 {edge.i} {edge.j}" for edge in model.edges]
    lines.append("")
    for theta in model.unaries:
        lines += [str(theta.size), _format_values(np.exp(-theta)), ""]
    for edge in model.edges:
        lines += [str(edge.table.size), _format_values(np.exp(-edge.table.ravel())), ""]
    return "\n".join(lines)


# ==================================================================================
# NATIVE JSON
# ==================================================================================

def model_to_dict(model: Model) -> dict:
    return {
        "num_nodes": model.num_nodes,
        "cardinalities": list(model.cardinalities),
        "unaries": [u.tolist() for u in model.unaries],
        "edges": [{"i": e.i, "j": e.j, "table": e.table.tolist()} for e in model.edges],
    }


def model_from_dict(data: dict) -> Model:
    """
    Raises:
        FormatError: on missing keys or a node count that disagrees with the cardinalities
    """
    try:
        cards = data["cardinalities"]
        if "num_nodes" in data and int(data["num_nodes"]) != len(cards):
            raise FormatError(f"num_nodes={data['num_nodes']} but {len(cards)} cardinalities")
        unaries = data.get("unaries") or [[0.0] * int(k) for k in cards]
        edges = [(e["i"], e["j"], e["table"]) for e in data.get("edges", [])]
    except (KeyError, TypeError) as e:
        raise FormatError(f"native model is missing field {e}") from None
    try:
        return Model.create(cards, unaries, edges)
    except (ModelError, ValueError) as e:
        raise FormatError(str(e)) from e


def parse_native(text: str) -> Model:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e}") from None
    return model_from_dict(data)


def emit_native(model: Model) -> str:
    return json.dumps(model_to_dict(model), indent=1)


# ==================================================================================
# FILES
# ==================================================================================

def detect_format(path, fmt: Optional[str] = None) -> str:
    if fmt is not None:
        if fmt not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {fmt!r}")
        return fmt
    return NATIVE if Path(path).suffix.lower() == ".json" else UAI


def load_model(path, fmt: Optional[str] = None) -> Model:
    """Read a model; the format follows the suffix (.json is native) unless given."""
    fmt = detect_format(path, fmt)
    text = Path(path).read_text()
    model = parse_native(text) if fmt == NATIVE else parse_uai(text)
    logger.debug("loaded %s: %d nodes, %d edges", path, model.num_nodes, model.num_edges)
    return model


def save_model(model: Model, path, fmt: Optional[str] = None):
    fmt = detect_format(path, fmt)
    Path(path).write_text(emit_native(model) if fmt == NATIVE else emit_uai(model))


# ==================================================================================
# SYNTHETIC POTTS GRIDS
# ==================================================================================

def potts_streams(seed: int):
    """Independent generators for the unaries and the edge coefficients."""
    unary_seq, edge_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(unary_seq)), np.random.Generator(np.random.PCG64(edge_seq))


def grid_edges(size: int):
    """Right and down neighbours of an M x M grid, node id r * M + c."""
    edges = []
    for r in range(size):
        for c in range(size):
            node = r * size + c
            if c + 1 < size:
                edges.append((node, node + 1))
            if r + 1 < size:
                edges.append((node, node + size))
    return edges


def generate_potts(size: int, states: int, sigma: float, seed: int) -> Model:
    """
    Random M x M Potts grid: theta_i(k) ~ U(-sigma, sigma) and, per edge,
    theta_ij(k, l) = alpha_ij if k == l else 0 with alpha_ij ~ U(-1, 1).

    Raises:
        ConfigError: for size < 2, states < 2 or sigma <= 0
    """
    if size < 2:
        raise ConfigError(f"grid size must be at least 2, got {size}")
    if states < 2:
        raise ConfigError(f"need at least 2 states, got {states}")
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")

    unary_rng, edge_rng = potts_streams(seed)
    n = size * size
    unaries = unary_rng.uniform(-sigma, sigma, size=(n, states))
    pairs = grid_edges(size)
    alphas = edge_rng.uniform(-1.0, 1.0, size=len(pairs))
    edges = [(i, j, alpha * np.eye(states)) for (i, j), alpha in zip(pairs, alphas)]
    return Model.create([states] * n, list(unaries), edges)
