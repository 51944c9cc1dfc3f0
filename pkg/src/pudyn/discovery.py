"""Turn a trained network into symbolic monomial terms and score them against ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import SystemSpec, get_system
from .network import ProductUnitModel

VARIABLES = ("x", "y", "z")


@dataclass(frozen=True)
class Term:
    """``coefficient * prod_i var_i ** exponents[i]`` with the bias already folded in."""

    coefficient: complex
    exponents: tuple[complex, ...]

    def __post_init__(self):
        object.__setattr__(self, "coefficient", complex(self.coefficient))
        object.__setattr__(self, "exponents", tuple(complex(e) for e in self.exponents))


@dataclass
class MergeConfig:
    epsilon: float = 0.1
    delta: float = 1e-3
    rounding_decimals: int = 3

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


@dataclass
class EquationMatch:
    correct: int
    erroneous: int
    pairs: list[tuple[int, int]]  # (predicted index, truth index)
    unmatched_truth: list[Term]


@dataclass
class MatchReport:
    correct_count: int
    erroneous_count: int
    truth_count: int
    equations: list[EquationMatch] = field(default_factory=list)

    @property
    def fully_correct(self) -> bool:
        return self.correct_count == self.truth_count and self.erroneous_count == 0


def round_half_away(x, decimals: int):
    """Round half away from zero (applied separately to real and imaginary parts)."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return round_half_away(x.real, decimals) + 1j * round_half_away(x.imag, decimals)
    f = 10.0**decimals
    out = np.sign(x) * np.floor(np.abs(x) * f + 0.5) / f
    return out + 0.0  # drop negative zeros


def extract_terms(model: ProductUnitModel, output_index: int) -> list[Term]:
    """One term per product unit for output ``output_index``."""
    if not 0 <= output_index < model.n_outputs:
        raise IndexError(f"output index {output_index} out of range")
    coefs = model.effective_coefficients()[output_index]
    return [Term(c, tuple(w)) for c, w in zip(coefs, model.exponents)]


def _sort_key(t: Term):
    return tuple((e.real, e.imag) for e in t.exponents) + ((t.coefficient.real, t.coefficient.imag),)


def merge_terms(terms: Sequence[Term], config: MergeConfig | float = MergeConfig()) -> list[Term]:
    """Merge terms whose exponents all lie within ``epsilon`` of each other.

    The closest qualifying pair (largest per-variable distance) merges first,
    until no pair qualifies.  A merged term carries the mean exponents of all
    its members and the sum of their coefficients.  Inputs are put in a
    canonical order first, so the result does not depend on input order.
    """
    eps = config.epsilon if isinstance(config, MergeConfig) else float(config)
    items = sorted(terms, key=_sort_key)
    if not items:
        return []
    n_vars = len(items[0].exponents)
    if any(len(t.exponents) != n_vars for t in items):
        raise ValueError("terms have different numbers of exponents")
    exps = [np.array(t.exponents) for t in items]
    coefs = [t.coefficient for t in items]
    counts = [1] * len(items)

    while len(exps) > 1:
        E = np.array(exps)
        dist = np.abs(E[:, None, :] - E[None, :, :]).max(axis=-1)
        dist[np.tril_indices(len(exps))] = np.inf
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        if not dist[i, j] <= eps:
            break
        ni, nj = counts[i], counts[j]
        exps[i] = (ni * exps[i] + nj * exps[j]) / (ni + nj)
        coefs[i] = coefs[i] + coefs[j]
        counts[i] = ni + nj
        del exps[j], coefs[j], counts[j]
    return sorted((Term(c, tuple(e)) for c, e in zip(coefs, exps)), key=_sort_key)


def prune_terms(terms: Sequence[Term], delta: float = 1e-3) -> list[Term]:
    """Keep terms with ``|coefficient| >= delta``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return [t for t in terms if abs(t.coefficient) >= delta]


def _term_distance(a: Term, b: Term) -> float:
    d = abs(a.coefficient - b.coefficient)
    return max([d] + [abs(x - y) for x, y in zip(a.exponents, b.exponents)])


def match_against_truth(
    predicted: Sequence[Sequence[Term]],
    truth: Sequence[Sequence[Term]],
    epsilon: float = 0.1,
) -> MatchReport:
    """Count correct and erroneous terms, equation by equation.

    A predicted term is correct when its coefficient and every exponent lie
    within ``epsilon`` of a ground-truth term.  Assignment is one-to-one and
    greedy, closest pairs first.
    """
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth have different numbers of equations")
    report = MatchReport(0, 0, sum(len(eq) for eq in truth))
    for pred_eq, truth_eq in zip(predicted, truth):
        cand = sorted(
            (d, i, j)
            for i, p in enumerate(pred_eq)
            for j, t in enumerate(truth_eq)
            if (d := _term_distance(p, t)) <= epsilon
        )
        used_p, used_t, pairs = set(), set(), []
        for _, i, j in cand:
            if i not in used_p and j not in used_t:
                used_p.add(i)
                used_t.add(j)
                pairs.append((i, j))
        em = EquationMatch(
            correct=len(pairs),
            erroneous=len(pred_eq) - len(pairs),
            pairs=sorted(pairs),
            unmatched_truth=[t for j, t in enumerate(truth_eq) if j not in used_t],
        )
        report.equations.append(em)
        report.correct_count += em.correct
        report.erroneous_count += em.erroneous
    return report


def truth_terms(system: str | SystemSpec) -> list[list[Term]]:
    return [[Term(c, ex) for c, ex in eq] for eq in get_system(system).truth]


# ---------------------------------------------------------------------------
# rendering

def _fmt_real(v: float, decimals: int, strip: bool = False) -> str:
    s = f"{float(round_half_away(v, decimals)):.{decimals}f}"
    if strip and "." in s:
        s = s.rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _fmt_complex(z: complex, decimals: int, strip: bool = False) -> str:
    tol = 0.5 * 10.0**-decimals
    if abs(z.imag) < tol:
        return _fmt_real(z.real, decimals, strip)
    im = _fmt_real(abs(z.imag), decimals, strip)
    sign = "-" if z.imag < 0 else "+"
    return f"({_fmt_real(z.real, decimals, strip)}{sign}{im}i)"


def render_term(term: Term, names: Sequence[str] = VARIABLES, decimals: int = 3) -> str:
    tol = 0.5 * 10.0**-decimals
    factors = []
    for name, w in zip(names, term.exponents):
        if abs(w.imag) < tol and abs(w.real - round(w.real)) < tol:
            k = int(round(w.real))
            if k == 0:
                continue
            factors.append(name if k == 1 else f"{name}^{k}")
        else:
            factors.append(f"{name}^{_fmt_complex(w, decimals, strip=True)}")
    coef = _fmt_complex(term.coefficient, decimals)
    return "*".join([coef] + factors)


def render_equation(terms: Sequence[Term], names: Sequence[str] = VARIABLES, decimals: int = 3) -> str:
    if not terms:
        return "0"
    out = " + ".join(render_term(t, names, decimals) for t in terms)
    return out.replace("+ -", "- ")


def render_equations(
    equations: Sequence[Sequence[Term]],
    names: Sequence[str] = VARIABLES,
    decimals: int = 3,
) -> str:
    lhs = [f"d{n}/dt" for n in names]
    return "\n".join(
        f"{lhs[v] if v < len(lhs) else f'f{v}'} = {render_equation(eq, names, decimals)}"
        for v, eq in enumerate(equations)
    )


# ---------------------------------------------------------------------------
# pipeline and report

@dataclass
class DiscoveryResult:
    equations: list[list[Term]]
    report: Optional[MatchReport]
    text: str


def discover(
    model: ProductUnitModel,
    system: str | SystemSpec | None = None,
    config: MergeConfig = MergeConfig(),
    names: Sequence[str] = VARIABLES,
) -> DiscoveryResult:
    """extract -> merge -> prune per equation, then match against ``system`` if given."""
    equations = [
        prune_terms(merge_terms(extract_terms(model, v), config), config.delta)
        for v in range(model.n_outputs)
    ]
    report = None
    if system is not None:
        report = match_against_truth(equations, truth_terms(system), config.epsilon)
    return DiscoveryResult(equations, report, render_equations(equations, names, config.rounding_decimals))


def _pair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def term_to_dict(t: Term) -> dict:
    return {"coefficient": _pair(t.coefficient), "exponents": [_pair(e) for e in t.exponents]}


def report_to_dict(result: DiscoveryResult, **extra) -> dict:
    doc = dict(extra)
    doc["equations"] = [[term_to_dict(t) for t in eq] for eq in result.equations]
    doc["rendered"] = result.text.splitlines()
    if result.report is not None:
        r = result.report
        doc["match"] = {
            "correct": r.correct_count,
            "erroneous": r.erroneous_count,
            "truth_terms": r.truth_count,
            "fully_correct": r.fully_correct,
            "per_equation": [
                {
                    "correct": e.correct,
                    "erroneous": e.erroneous,
                    "unmatched_truth": [term_to_dict(t) for t in e.unmatched_truth],
                }
                for e in r.equations
            ],
        }
    return doc


def write_report_json(result: DiscoveryResult, path, **extra) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(result, **extra), fh, indent=1)
        fh.write("\n")


SUMMARY_HEADER = ["system", "seed", "points", "trajectories", "units", "correct", "erroneous", "final_loss"]
