"""Mamdani fuzzy inference with triangular Ruspini partitions.

Variables carry labeled triangular memberships given by an apex list; between
apexes the labels interpolate linearly and the outermost labels shoulder to
the domain ends, so degrees always sum to 1. Rules conjoin antecedent degrees
with min, scale by the rule weight, clip the consequent set, and aggregate by
pointwise max.

The output universe is canonically sampled on a fixed 1001-point grid; the
aggregated membership function is that polyline, and centroid defuzzification
integrates it with the trapezoid rule on the same grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import Config

GRID_POINTS = 1001


class RuleBaseError(ValueError):
    pass


class ZeroMassError(ArithmeticError):
    """Aggregated membership has no area to take a centroid of."""


@dataclass(frozen=True)
class FuzzyVariable:
    name: str
    domain: tuple[float, float]
    labels: tuple[str, ...]
    apexes: tuple[float, ...]

    def __post_init__(self):
        lo, hi = self.domain
        if not lo < hi:
            raise RuleBaseError(f"{self.name}: empty domain {self.domain}")
        if len(self.labels) != len(self.apexes) or not self.labels:
            raise RuleBaseError(f"{self.name}: labels and apexes must pair up")
        if any(b <= a for a, b in zip(self.apexes, self.apexes[1:])):
            raise RuleBaseError(f"{self.name}: apexes must strictly increase")
        if self.apexes[0] < lo or self.apexes[-1] > hi:
            raise RuleBaseError(f"{self.name}: apexes outside domain")

    def membership(self, label: str, x) -> np.ndarray | float:
        """Degree of one label at x (x may be an array); x is clamped."""
        i = self.labels.index(label)
        hot = np.zeros(len(self.labels))
        hot[i] = 1.0
        if len(self.apexes) == 1:
            return np.ones_like(np.asarray(x, dtype=float)) * hot[0]
        return np.interp(np.asarray(x, dtype=float), self.apexes, hot)

    def fuzzify(self, x: float) -> dict[str, float]:
        """All label degrees at a crisp input; a Ruspini partition, so they sum to 1."""
        xs = float(np.clip(x, *self.domain))
        return {lbl: float(self.membership(lbl, xs)) for lbl in self.labels}

    def degree_matrix(self, x: np.ndarray) -> np.ndarray:
        """Degrees for every label, shape (len(x), n_labels)."""
        x = np.clip(np.asarray(x, dtype=float), *self.domain)
        cols = [self.membership(lbl, x) for lbl in self.labels]
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Rule:
    antecedent: tuple[tuple[str, str], ...]  # ((variable, label), ...)
    consequent: str
    weight: float = 1.0

    def __post_init__(self):
        if not self.antecedent:
            raise RuleBaseError("rule needs at least one antecedent clause")
        if not 0.0 < self.weight <= 1.0:
            raise RuleBaseError(f"rule weight must be in (0,1]: {self.weight}")


@dataclass
class AggregatedOutput:
    """Max-aggregated clipped consequents, sampled on the canonical grid."""

    variable: FuzzyVariable
    strengths: dict[str, float]
    grid: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)

    def membership(self, x) -> np.ndarray:
        """Evaluate the aggregate polyline at arbitrary points."""
        return np.interp(np.asarray(x, dtype=float), self.grid, self.samples)


class RuleBase:
    def __init__(self, inputs: list[FuzzyVariable], output: FuzzyVariable,
                 rules: list[Rule]):
        self.inputs = {v.name: v for v in inputs}
        self.output = output
        self.rules = list(rules)
        if not self.rules:
            raise RuleBaseError("empty rulebase")
        self._validate_references()
        self.grid = np.linspace(output.domain[0], output.domain[1], GRID_POINTS)
        self._consequent_samples = {
            lbl: np.asarray(output.membership(lbl, self.grid), dtype=float)
            for lbl in output.labels
        }
        self._check_coverage()

    def _validate_references(self) -> None:
        for rule in self.rules:
            for var, label in rule.antecedent:
                if var not in self.inputs:
                    raise RuleBaseError(f"rule references unknown variable {var!r}")
                if label not in self.inputs[var].labels:
                    raise RuleBaseError(f"{var} has no label {label!r}")
            if rule.consequent not in self.output.labels:
                raise RuleBaseError(f"output has no label {rule.consequent!r}")

    def _probe_points(self, v: FuzzyVariable) -> np.ndarray:
        pts = [v.domain[0], v.domain[1], *v.apexes]
        pts += [(a + b) / 2 for a, b in zip(v.apexes, v.apexes[1:])]
        return np.unique(np.asarray(pts, dtype=float))

    def _check_coverage(self) -> None:
        """Every point of the input domain must fire at least one rule."""
        names = list(self.inputs)
        axes = [self._probe_points(self.inputs[n]) for n in names]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = {n: m.ravel() for n, m in zip(names, mesh)}
        strength = self._label_strengths(flat).max(axis=1)
        if strength.min() <= 0.0:
            i = int(strength.argmin())
            point = {n: float(flat[n][i]) for n in names}
            raise RuleBaseError(f"no rule fires at {point}")

    def _label_strengths(self, inputs: dict[str, np.ndarray]) -> np.ndarray:
        """Max rule activation per output label, shape (N, n_output_labels)."""
        degrees = {
            name: self.inputs[name].degree_matrix(inputs[name])
            for name in self.inputs
        }
        n = next(iter(degrees.values())).shape[0]
        out = np.zeros((n, len(self.output.labels)))
        idx = {lbl: i for i, lbl in enumerate(self.output.labels)}
        for rule in self.rules:
            act = np.full(n, rule.weight)
            for var, label in rule.antecedent:
                col = self.inputs[var].labels.index(label)
                act = np.minimum(act, rule.weight * degrees[var][:, col])
            j = idx[rule.consequent]
            out[:, j] = np.maximum(out[:, j], act)
        return out

    def infer(self, fuzzified: dict[str, dict[str, float]] | dict[str, float]) -> AggregatedOutput:
        """Aggregate all rules for one crisp (or pre-fuzzified) input set."""
        if fuzzified and isinstance(next(iter(fuzzified.values())), dict):
            degrees = fuzzified
        else:
            degrees = {n: self.inputs[n].fuzzify(x) for n, x in fuzzified.items()}
        missing = set(self.inputs) - set(degrees)
        if missing:
            raise RuleBaseError(f"inputs missing variables: {sorted(missing)}")

        strengths: dict[str, float] = {lbl: 0.0 for lbl in self.output.labels}
        for rule in self.rules:
            act = rule.weight
            for var, label in rule.antecedent:
                act = min(act, rule.weight * degrees[var].get(label, 0.0))
            strengths[rule.consequent] = max(strengths[rule.consequent], act)

        samples = np.zeros_like(self.grid)
        for lbl, s in strengths.items():
            if s > 0.0:
                np.maximum(samples, np.minimum(s, self._consequent_samples[lbl]),
                           out=samples)
        return AggregatedOutput(variable=self.output, strengths=strengths,
                                grid=self.grid, samples=samples)

    def evaluate(self, inputs: dict[str, float]) -> float:
        return defuzzify_centroid(self.infer(inputs))

    def evaluate_batch(self, inputs: dict[str, np.ndarray],
                       chunk: int = 4096) -> np.ndarray:
        """Vectorized centroid scores for arrays of crisp inputs.

        Inputs on coarse grids produce many repeated label-strength rows, so
        the centroid is computed once per distinct row.
        """
        names = list(self.inputs)
        n = len(np.asarray(inputs[names[0]]))
        strengths = self._label_strengths(
            {k: np.asarray(v, dtype=float) for k, v in inputs.items()})
        uniq, inverse = np.unique(strengths, axis=0, return_inverse=True)

        cons = [self._consequent_samples[lbl] for lbl in self.output.labels]
        centroids = np.empty(len(uniq))
        clip = np.empty((chunk, GRID_POINTS))
        agg = np.empty((chunk, GRID_POINTS))
        for start in range(0, len(uniq), chunk):
            sl = slice(start, min(start + chunk, len(uniq)))
            m = sl.stop - sl.start
            a, c = agg[:m], clip[:m]
            a.fill(0.0)
            for j, samples in enumerate(cons):
                np.minimum(uniq[sl, j, None], samples[None, :], out=c)
                np.maximum(a, c, out=a)
            mass = np.trapezoid(a, self.grid, axis=1)
            if np.any(mass <= 0.0):
                raise ZeroMassError("zero-mass aggregate in batch")
            num = np.trapezoid(a * self.grid, self.grid, axis=1)
            centroids[sl] = num / mass
        return centroids[inverse]


def defuzzify_centroid(agg: AggregatedOutput) -> float:
    """Centroid of the aggregate via trapezoid quadrature on the fixed grid."""
    mass = float(np.trapezoid(agg.samples, agg.grid))
    if mass <= 0.0:
        raise ZeroMassError("aggregate membership is identically zero")
    num = float(np.trapezoid(agg.samples * agg.grid, agg.grid))
    return num / mass


def _parse_labels(text: str, where: str) -> tuple[tuple[str, ...], tuple[float, ...]]:
    labels, apexes = [], []
    for tok in text.split():
        name, _, apex = tok.partition(":")
        if not apex:
            raise RuleBaseError(f"{where}: label needs 'name:apex', got {tok!r}")
        labels.append(name)
        apexes.append(float(apex))
    return tuple(labels), tuple(apexes)


def _parse_rule(text: str) -> Rule:
    head, sep, tail = text.partition("=>")
    if not sep:
        raise RuleBaseError(f"rule needs '=>': {text!r}")
    clauses = []
    for part in head.split(" and "):
        toks = part.split()
        if len(toks) != 3 or toks[1] != "is":
            raise RuleBaseError(f"bad clause {part.strip()!r} in rule {text!r}")
        clauses.append((toks[0], toks[2]))
    toks = tail.split()
    weight = 1.0
    if len(toks) == 3 and toks[1] == "weight":
        weight = float(toks[2])
    elif len(toks) != 1:
        raise RuleBaseError(f"bad consequent {tail.strip()!r}")
    return Rule(antecedent=tuple(clauses), consequent=toks[0], weight=weight)


def parse_rulebase(text: str) -> RuleBase:
    """Load a rulebase from its config-file form.

    Sections ``[variable <name>]`` and ``[output <name>]`` declare the
    universe (``domain = lo hi``; ``labels = name:apex ...``); the ``[rules]``
    section lists ``rule = a is x and b is y => label [weight w]`` lines.
    """
    cfg = Config.parse(text)
    inputs: list[FuzzyVariable] = []
    output: FuzzyVariable | None = None
    for section in cfg.sections():
        kind, _, name = section.partition(" ")
        if kind not in ("variable", "output"):
            if section == "rules":
                continue
            raise RuleBaseError(f"unknown section [{section}]")
        lo_hi = cfg.get_str(section, "domain").split()
        if len(lo_hi) != 2:
            raise RuleBaseError(f"[{section}]: domain must be 'lo hi'")
        labels, apexes = _parse_labels(cfg.get_str(section, "labels"), section)
        var = FuzzyVariable(name=name, domain=(float(lo_hi[0]), float(lo_hi[1])),
                            labels=labels, apexes=apexes)
        if kind == "output":
            if output is not None:
                raise RuleBaseError("more than one [output] section")
            output = var
        else:
            inputs.append(var)
    if output is None:
        raise RuleBaseError("missing [output] section")
    rules = [_parse_rule(r) for r in cfg.get_all("rules", "rule")]
    return RuleBase(inputs=inputs, output=output, rules=rules)
