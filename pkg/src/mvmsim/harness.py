"""Monte Carlo engine, check records, and report persistence.

Reproducibility rules everything here: per-path values are filled into a
preallocated array indexed by path_id and reduced over the full array,
so the report is a pure function of (seed, paths) — worker threads and
chunk completion order cannot perturb a single bit.  Written reports
carry no wall-clock data for the same reason; timings go to stderr.
"""

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np


class HarnessError(RuntimeError):
    pass


class McEstimate:
    """Sample mean with its standard error."""

    def __init__(self, mean, stderr, n, statistic=None):
        self.mean = float(mean)
        self.stderr = float(stderr)
        self.n = int(n)
        self.statistic = statistic
        if self.n < 2:
            raise HarnessError("need at least 2 samples, got %d" % self.n)
        if not self.stderr >= 0.0:
            raise HarnessError("stderr must be nonnegative")

    @classmethod
    def from_values(cls, values, statistic=None):
        values = np.asarray(values, dtype=float)
        return cls(values.mean(), values.std(ddof=1) / np.sqrt(values.size),
                   values.size, statistic=statistic)

    def __repr__(self):
        return "McEstimate(%s=%g +- %g, n=%d)" % (
            self.statistic or "mean", self.mean, self.stderr, self.n)


def run_ensemble(scenario, evaluator=None, batch_evaluator=None, k=1,
                 statistic=None, workers=1, paths=None, seed=None, batch=512):
    """MC estimate(s) of a per-path statistic over path_id 0..n-1.

    evaluator(path_id) -> float (or length-k array); batch_evaluator
    (ids array) -> (len(ids), k) array is the vectorized alternative.
    Chunks of fixed size `batch` fan out over worker threads; values land
    in a preallocated array by path index, so the estimate is identical
    for every worker count.  A NaN value raises, naming the path_id.
    """
    n = int(scenario.paths if paths is None else paths)
    seed = scenario.seed if seed is None else seed
    if n < 2:
        raise HarnessError("need at least 2 paths, got %d" % n)
    if (evaluator is None) == (batch_evaluator is None):
        raise HarnessError("pass exactly one of evaluator/batch_evaluator")
    if batch_evaluator is None:
        def batch_evaluator(ids):
            return np.array([np.atleast_1d(evaluator(int(b))) for b in ids])
    values = np.empty((n, int(k)))
    chunks = [np.arange(lo, min(lo + int(batch), n))
              for lo in range(0, n, int(batch))]

    def fill(ids):
        out = np.asarray(batch_evaluator(ids), dtype=float).reshape(len(ids), int(k))
        values[ids[0]:ids[-1] + 1] = out

    if workers and int(workers) > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            list(pool.map(fill, chunks))
    else:
        for ids in chunks:
            fill(ids)
    bad = np.nonzero(np.isnan(values).any(axis=1))[0]
    if bad.size:
        raise HarnessError("statistic is NaN for path_id %d (seed %s)"
                           % (int(bad[0]), seed))
    labels = statistic if isinstance(statistic, (list, tuple)) else [statistic] * int(k)
    ests = [McEstimate.from_values(values[:, j], statistic=labels[j])
            for j in range(int(k))]
    return ests[0] if int(k) == 1 and not isinstance(statistic, (list, tuple)) \
        else ests


class CheckResult:
    """One verification check: identity, target, estimate, verdict.

    provenance tags how the target was obtained: 'exact' (structural
    identity), 'closed-form', 'quadrature', or 'statistical'.
    """

    def __init__(self, name, identity, target, estimate, tolerance, passed,
                 provenance="closed-form", time=None, detail=None):
        self.name = name
        self.identity = identity
        self.target = None if target is None else float(target)
        self.estimate = estimate  # McEstimate or float
        self.tolerance = float(tolerance)
        self.passed = bool(passed)
        self.provenance = provenance
        self.time = time
        self.detail = detail

    @property
    def mean(self):
        return self.estimate.mean if isinstance(self.estimate, McEstimate) \
            else float(self.estimate)

    def to_dict(self):
        d = {
            "name": self.name,
            "identity": self.identity,
            "provenance": self.provenance,
            "target": self.target,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }
        if isinstance(self.estimate, McEstimate):
            d["estimate"] = {"mean": self.estimate.mean,
                             "stderr": self.estimate.stderr,
                             "n": self.estimate.n}
        else:
            d["estimate"] = {"value": float(self.estimate)}
        if self.detail is not None:
            d["detail"] = self.detail
        return d

    def csv_row(self):
        if isinstance(self.estimate, McEstimate):
            mean, stderr, n = self.estimate.mean, self.estimate.stderr, self.estimate.n
        else:
            mean, stderr, n = float(self.estimate), 0.0, 1
        return ["" if self.time is None else repr(float(self.time)),
                self.name, repr(mean), repr(stderr), n,
                "" if self.target is None else repr(self.target),
                "true" if self.passed else "false"]

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        if isinstance(self.estimate, McEstimate):
            got = "%.6g +- %.2g" % (self.estimate.mean, self.estimate.stderr)
        else:
            got = "%.6g" % float(self.estimate)
        tgt = "" if self.target is None else " target %.6g" % self.target
        return "%s  %-38s %s%s (tol %.3g)" % (status, self.name, got, tgt,
                                              self.tolerance)


CSV_COLUMNS = ["time", "statistic", "mean", "stderr", "n", "target", "pass"]


class VerificationReport:
    """Suite outcome: ordered checks plus the aggregate verdict.

    Serialized forms (JSON/CSV) are bit-identical across runs and worker
    counts for fixed (seed, paths): no timings, no thread counts.
    """

    def __init__(self, suite, scenario, checks):
        self.suite = suite
        self.scenario_name = scenario.name
        self.version = scenario.version
        self.seed = scenario.seed
        self.paths = scenario.paths
        self.dimension = scenario.dimension
        self.steps = scenario.steps
        self.checks = list(checks)
        self.passed = all(c.passed for c in self.checks)
        self.failures = [c.name for c in self.checks if not c.passed]

    def to_dict(self):
        return {
            "suite": self.suite,
            "scenario": self.scenario_name,
            "version": self.version,
            "seed": self.seed,
            "paths": self.paths,
            "dimension": self.dimension,
            "steps": self.steps,
            "passed": self.passed,
            "failures": self.failures,
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for c in self.checks:
            writer.writerow(c.csv_row())
        return buf.getvalue()

    def lines(self):
        out = [c.line() for c in self.checks]
        out.append("%s  %d/%d checks passed [suite %s]"
                   % ("PASS" if self.passed else "FAIL",
                      sum(c.passed for c in self.checks), len(self.checks),
                      self.suite))
        return out

    def write(self, out_dir, fmt="csv"):
        import os
        os.makedirs(out_dir, exist_ok=True)
        written = []
        path = os.path.join(out_dir, "report_%s.json" % self.suite)
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")
        written.append(path)
        if fmt == "csv":
            path = os.path.join(out_dir, "report_%s.csv" % self.suite)
            with open(path, "w") as fh:
                fh.write(self.to_csv())
            written.append(path)
        return written


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()

    def lap(self):
        now = time.perf_counter()
        out = now - self.t0
        self.t0 = now
        return out


def statistical_check(name, identity, estimate, target, bias=0.0, sigmas=4.0,
                      detail=None):
    """MC check with the standard tolerance: sigmas * stderr + |bias|.

    The bias term is the declared deterministic discretization gap
    (computed, never guessed); pure-MC checks pass bias=0.
    """
    tol = sigmas * estimate.stderr + abs(bias)
    passed = abs(estimate.mean - target) <= tol
    return CheckResult(name, identity, target, estimate, tol, passed,
                       provenance="statistical", detail=detail)


def exact_check(name, identity, value, tolerance, target=0.0, detail=None):
    """Structural identity evaluated path-wise; value is the worst defect."""
    passed = abs(float(value) - float(target)) <= tolerance
    return CheckResult(name, identity, target, float(value), tolerance, passed,
                       provenance="exact", detail=detail)
