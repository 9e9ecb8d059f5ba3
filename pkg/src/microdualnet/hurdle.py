"""Two-part engagement analysis: logistic GLM for whether a subject engages in an
action, fractional logit for how much among those who do, pairwise group
contrasts as odds ratios, and Benjamini-Hochberg adjustment.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import norm

PROBABILITY = "probability"
INTENSITY = "intensity"
OUTPUT_COLUMNS = ["action", "contrast", "type", "effect", "p", "p_adj"]
SEPARATION_BOUND = 30.0
CLIP_ONE = 1.0 - 1e-6


class SingularDesignError(np.linalg.LinAlgError):
    pass


class DegenerateFitError(ValueError):
    pass


class HurdleInputError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class GLMResult:
    coef: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    n_iter: int
    converged: bool
    separated: bool = False
    deviance: List[float] = field(default_factory=list)

    @property
    def reliable(self) -> bool:
        return self.converged and not self.separated


def _check_design(design, y) -> tuple:
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError(f"design {x.shape} and response {y.shape} do not conform")
    n, p = x.shape
    if n <= p:
        raise ValueError(f"need more observations than coefficients (N={n}, P={p})")
    zero = np.flatnonzero(~x.any(axis=0))
    if zero.size:
        raise ValueError(f"design column(s) {zero.tolist()} are all zero")
    if not np.isfinite(x).all() or not np.isfinite(y).all():
        raise ValueError("design and response must be finite")
    return x, y


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if not np.isfinite(a).all() or np.linalg.cond(a) > 1e14:
        raise SingularDesignError("weighted normal matrix is singular")
    return np.linalg.solve(a, b)


def bernoulli_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    """-2 * quasi log-likelihood; valid for fractional y too."""
    mu = np.clip(mu, 1e-300, 1.0)
    one_minus = np.clip(1.0 - mu, 1e-300, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        t0 = np.where(y < 1, (1 - y) * np.log(np.where(y < 1, 1 - y, 1.0) / one_minus), 0.0)
    return float(2.0 * np.sum(t1 + t0))


def _irls(x: np.ndarray, y: np.ndarray, max_iter: int, tol: float) -> tuple:
    beta = np.zeros(x.shape[1])
    dev = [bernoulli_deviance(y, expit(x @ beta))]
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = x @ beta
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-300)
        step = _solve(x.T @ (w[:, None] * x), x.T @ (y - mu))
        # step halving keeps the deviance non-increasing
        new, dv = beta + step, None
        for _ in range(30):
            dv = bernoulli_deviance(y, expit(x @ new))
            if dv <= dev[-1] + 1e-12 * max(1.0, abs(dev[-1])):
                break
            step = step / 2.0
            new = beta + step
        beta = new
        dev.append(min(dv, dev[-1]))
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            separated = True
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    return beta, it, converged, separated, dev


def _wald(beta: np.ndarray, cov: np.ndarray) -> tuple:
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / np.where(se > 0, se, 1.0), np.where(beta == 0, 0.0, np.inf))
    p = 2.0 * norm.sf(np.abs(z))
    return se, z, p


def fit_logistic_irls(design, y, max_iter: int = 100, tol: float = 1e-8) -> GLMResult:
    """Binary logistic regression by IRLS; model-based covariance ``(X' W X)^-1``."""
    x, y = _check_design(design, y)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic response must be 0/1")
    beta, it, converged, separated, dev = _irls(x, y, max_iter, tol)
    mu = expit(x @ beta)
    w = mu * (1.0 - mu)
    info = x.T @ (w[:, None] * x)
    try:
        cov = np.linalg.inv(info) if not separated else np.full((x.shape[1],) * 2, np.nan)
    except np.linalg.LinAlgError:
        cov = np.full((x.shape[1],) * 2, np.nan)
    se, z, p = _wald(beta, cov)
    if separated:
        p = np.full_like(beta, np.nan)
    return GLMResult(beta, cov, se, z, p, it, converged, separated, dev)


def fit_fractional_logit(design, y, max_iter: int = 100, tol: float = 1e-8) -> GLMResult:
    """Quasi-binomial logit for fractions in [0, 1] with sandwich standard errors."""
    x, y = _check_design(design, y)
    if (y < 0).any() or (y > 1).any():
        raise ValueError("fractional response must lie in [0, 1]")
    if np.ptp(y) == 0:
        raise DegenerateFitError("all responses are identical; the fit is degenerate")
    y = np.where(y >= 1.0, CLIP_ONE, y)
    beta, it, converged, separated, dev = _irls(x, y, max_iter, tol)
    mu = expit(x @ beta)
    bread = np.linalg.inv(x.T @ ((mu * (1.0 - mu))[:, None] * x))
    r = y - mu
    meat = x.T @ ((r * r)[:, None] * x)
    cov = bread @ meat @ bread
    se, z, p = _wald(beta, cov)
    return GLMResult(beta, cov, se, z, p, it, converged, separated, dev)


def adjust_pvalues(ps: Sequence[float], method: str = "bh") -> np.ndarray:
    """Benjamini-Hochberg step-up adjustment, returned in input order."""
    if method.lower() not in ("bh", "benjamini-hochberg", "fdr_bh"):
        raise ValueError(f"unknown adjustment method {method!r}")
    p = np.asarray(ps, dtype=np.float64)
    if p.size == 0:
        return p.copy()
    if ((p < 0) | (p > 1)).any():
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    out = np.empty(m)
    out[order] = adj
    return np.maximum(out, p)


# ----------------------------------------------------------------------------
# contrasts
# ----------------------------------------------------------------------------

@dataclass
class SubjectRecord:
    subject_id: str
    group: str
    engagement: Dict[str, float]

    def __post_init__(self):
        for a, v in self.engagement.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"subject {self.subject_id}: engagement for {a!r} is {v}, outside [0, 1]")


@dataclass
class TestResult:
    action: str
    contrast: str
    part: str
    effect: float
    p: float
    p_adj: float = float("nan")
    reliable: bool = True

    __test__ = False  # not a pytest class


@dataclass
class SkippedContrast:
    action: str
    contrast: str
    part: str
    reason: str


def group_order(records: Sequence[SubjectRecord]) -> List[str]:
    seen: List[str] = []
    for r in records:
        if r.group not in seen:
            seen.append(r.group)
    return seen


def _indicator_design(groups: Sequence[str], first: str) -> np.ndarray:
    g = np.array([1.0 if x == first else 0.0 for x in groups])
    return np.column_stack([np.ones_like(g), g])


def pairwise_contrasts(records: Sequence[SubjectRecord], action: str, part: str,
                       pairs: Optional[Iterable[tuple]] = None, skipped: Optional[list] = None) -> List[TestResult]:
    """One result per group pair ``(A, B)``; effect = exp(slope of the A indicator).

    Contrasts that cannot be fitted are appended to ``skipped`` with a reason.
    """
    if part not in (PROBABILITY, INTENSITY):
        raise ValueError(f"unknown part {part!r}")
    groups = group_order(records)
    sizes = {g: sum(r.group == g for r in records) for g in groups}
    if len(groups) < 2 or min(sizes.values()) < 2:
        raise ValueError("need at least two groups with at least two subjects each")
    skipped = skipped if skipped is not None else []
    pairs = list(pairs) if pairs is not None else list(itertools.combinations(groups, 2))
    out: List[TestResult] = []
    for a, b in pairs:
        name = f"{a} vs {b}"
        sub = [r for r in records if r.group in (a, b)]
        vals = np.array([r.engagement[action] for r in sub], dtype=np.float64)
        grp = [r.group for r in sub]
        if part == PROBABILITY:
            y = (vals > 0).astype(np.float64)
            if np.ptp(y) == 0:
                skipped.append(SkippedContrast(action, name, part, "no variation in engagement"))
                continue
            res = fit_logistic_irls(_indicator_design(grp, a), y)
        else:
            keep = vals > 0
            eng = [g for g, k in zip(grp, keep) if k]
            missing = [g for g in (a, b) if g not in eng]
            if missing:
                skipped.append(SkippedContrast(action, name, part, f"group {missing[0]} has no engagers"))
                continue
            if len(eng) <= 2:
                skipped.append(SkippedContrast(action, name, part, "too few engagers to fit"))
                continue
            try:
                res = fit_fractional_logit(_indicator_design(eng, a), vals[keep])
            except DegenerateFitError as e:
                skipped.append(SkippedContrast(action, name, part, str(e)))
                continue
        slope = res.coef[1]
        p = float(res.p[1]) if np.isfinite(res.p[1]) else 1.0
        out.append(TestResult(action, name, part, float(math.exp(slope)) if slope < 700 else math.inf, p,
                              reliable=res.reliable))
    return out


def adjust_results(results: Sequence[TestResult], family: str = "all") -> None:
    """Fill ``p_adj`` in place, adjusting within families: all, action, part or action-part."""
    keyfn = {
        "all": lambda r: None,
        "action": lambda r: r.action,
        "part": lambda r: r.part,
        "action-part": lambda r: (r.action, r.part),
    }.get(family)
    if keyfn is None:
        raise ValueError(f"unknown family grouping {family!r}")
    fams: Dict[object, List[TestResult]] = {}
    for r in results:
        fams.setdefault(keyfn(r), []).append(r)
    for members in fams.values():
        for r, q in zip(members, adjust_pvalues([m.p for m in members])):
            r.p_adj = float(q)


def run_hurdle(records: Sequence[SubjectRecord], actions: Sequence[str], family: str = "all") -> tuple:
    """Both parts for every action and group pair; results sorted by raw p."""
    results: List[TestResult] = []
    skipped: List[SkippedContrast] = []
    for action in actions:
        for part in (PROBABILITY, INTENSITY):
            results.extend(pairwise_contrasts(records, action, part, skipped=skipped))
    adjust_results(results, family)
    results.sort(key=lambda r: (r.p, r.action, r.contrast, r.part))
    return results, skipped


# ----------------------------------------------------------------------------
# CSV input / output
# ----------------------------------------------------------------------------

def parse_engagement_csv(text: str) -> tuple:
    """``subject_id,group,<action>...`` rows -> (records, action names)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise HurdleInputError("empty input", 1)
    header = [h.strip() for h in header]
    if len(header) < 3 or header[0] != "subject_id" or header[1] != "group":
        raise HurdleInputError("header must start with subject_id,group and name at least one action", 1)
    actions = header[2:]
    if len(set(actions)) != len(actions):
        raise HurdleInputError("duplicate action column", 1)
    records = []
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise HurdleInputError(f"expected {len(header)} fields, got {len(row)}", line)
        try:
            vals = {a: float(v) for a, v in zip(actions, row[2:])}
            records.append(SubjectRecord(row[0].strip(), row[1].strip(), vals))
        except ValueError as e:
            raise HurdleInputError(str(e), line) from e
    return records, actions


def read_engagement_csv(path) -> tuple:
    return parse_engagement_csv(Path(path).read_text())


def format_results_csv(results: Sequence[TestResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OUTPUT_COLUMNS)
    for r in results:
        w.writerow([r.action, r.contrast, r.part, f"{r.effect:.6g}", f"{r.p:.6g}", f"{r.p_adj:.6g}"])
    return buf.getvalue()
