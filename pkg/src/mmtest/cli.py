"""Command-line interface.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are the
option names in snake_case), ``--seed`` and ``--out``; explicit options win
over the config file.  Exit status is 0 on success, 2 on a configuration
error and 3 on a numerical failure.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .distinguish import (
    certify_family,
    construct_indicator_basis,
    construct_kronecker_basis,
    count_halfspace_subsets,
    lower_bound,
    upper_bound,
)
from .experiment import ConfigError, ExperimentConfig, NumericalFailure, emit_csv, format_csv, run_experiment
from .features import ObjectiveSpec, SvpConfig, extract_basis, svp_solve
from .mismatched import FeatureBasis, mismatched_divergence
from .prob import RngSeed, as_distribution, kl_divergence, stream, uniform
from .universal import TestSpec, monte_carlo_variance, run_test

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class _Fail(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except NumericalFailure as exc:
            raise _Fail(str(exc), EXIT_NUMERICAL) from exc
        except (ConfigError, ValueError, KeyError, TypeError, OSError) as exc:
            raise _Fail(f"{type(exc).__name__}: {exc}", EXIT_CONFIG) from exc

    return wrapper


def _load_config(path) -> dict:
    if path is None:
        return {}
    obj = json.loads(Path(path).read_text())
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return obj


def _pick(opts: dict, cfg: dict, key: str, default=None):
    value = opts.get(key)
    if value is None:
        value = cfg.get(key, default)
    return value


def _json_arg(value):
    """Parse inline JSON, or read it from the file ``value`` names."""
    if not isinstance(value, str):
        return value
    if value.lstrip()[:1] in ("[", "{"):
        return json.loads(value)
    return json.loads(Path(value).read_text())


def _vector(value):
    """A JSON array given inline, as a path to a JSON file, or already parsed."""
    if value is None:
        return None
    return np.asarray(_json_arg(value), dtype=float)


def _basis(value) -> FeatureBasis | None:
    if value is None:
        return None
    return FeatureBasis.from_dict(_json_arg(value))


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        click.echo(text)


def common(fn):
    fn = click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), default=None,
                      help="JSON file with option values.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Master seed.")(fn)
    fn = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output file.")(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Mismatched universal hypothesis testing toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr)


@main.command()
@click.option("--mu", default=None, help="First distribution (JSON array or file).")
@click.option("--pi", default=None, help="Reference distribution (JSON array or file).")
@common
@_guard
def div(**opts):
    """KL divergence D(mu || pi)."""
    cfg = _load_config(opts["config"])
    mu = as_distribution(_vector(_pick(opts, cfg, "mu")))
    pi = as_distribution(_vector(_pick(opts, cfg, "pi")))
    _emit(json.dumps({"kl": kl_divergence(mu, pi)}), _pick(opts, cfg, "out"))


@main.command()
@click.option("--mu", default=None, help="First distribution (JSON array or file).")
@click.option("--pi", default=None, help="Reference distribution (JSON array or file).")
@click.option("--basis", default=None, help="FeatureBasis JSON (inline or file).")
@common
@_guard
def mmdiv(**opts):
    """Mismatched divergence of mu from pi over the span of a basis."""
    cfg = _load_config(opts["config"])
    mu = _vector(_pick(opts, cfg, "mu"))
    pi = _vector(_pick(opts, cfg, "pi"))
    basis = _basis(_pick(opts, cfg, "basis"))
    if basis is None:
        raise ConfigError("--basis is required")
    sol = mismatched_divergence(mu, pi, basis)
    payload = {
        "value": sol.value,
        "kl": kl_divergence(mu, pi),
        "r_star": sol.r_star.tolist(),
        "grad_norm": sol.grad_norm,
        "boundary_hit": sol.boundary_hit,
        "iterations": sol.iterations,
    }
    _emit(json.dumps(payload), _pick(opts, cfg, "out"))


@main.command("test")
@click.option("--pi0", default=None, help="Null distribution (JSON array or file).")
@click.option("--samples", default=None, help="Observations, 1-based (JSON array or file).")
@click.option("--eta", type=float, default=None, help="Threshold.")
@click.option("--basis", default=None, help="FeatureBasis JSON; omit for the Hoeffding test.")
@common
@_guard
def test_cmd(**opts):
    """Run the Hoeffding or mismatched universal test on a sample."""
    cfg = _load_config(opts["config"])
    pi0 = _vector(_pick(opts, cfg, "pi0"))
    raw = _pick(opts, cfg, "samples")
    if raw is None:
        raise ConfigError("--samples is required")
    samples = np.asarray(_vector(raw), dtype=float)
    if not np.all(samples == np.round(samples)):
        raise ConfigError("samples must be integers")
    spec = TestSpec(pi0, float(_pick(opts, cfg, "eta", 0.0)), _basis(_pick(opts, cfg, "basis")))
    outcome = run_test(spec, samples.astype(int))
    payload = {
        "variant": spec.variant,
        "statistic": outcome.statistic,
        "decision": outcome.decision,
        "n": outcome.n,
        "boundary_hit": outcome.boundary_hit,
    }
    _emit(json.dumps(payload), _pick(opts, cfg, "out"))


@main.command()
@click.option("--pi0", default=None, help="Null distribution; defaults to uniform on --zsize.")
@click.option("--zsize", type=int, default=None, help="Alphabet size for a uniform null.")
@click.option("--basis", default=None, help="FeatureBasis JSON for the mismatched statistic.")
@click.option("--random-d", "random_d", type=int, default=None,
              help="Use a random minimal basis of this dimension (drawn from --seed).")
@click.option("--n", "n", type=int, default=None, help="Sample size per trial.")
@click.option("--trials", type=int, default=None, help="Number of Monte-Carlo trials.")
@click.option("--stream", "stream_index", type=int, default=None, help="Stream index under the seed.")
@click.option("--workers", type=int, default=None, help="Worker processes.")
@common
@_guard
def variance(**opts):
    """Monte-Carlo variance of n times the test statistic under the null."""
    cfg = _load_config(opts["config"])
    seed = int(_pick(opts, cfg, "seed", 0))
    pi0 = _vector(_pick(opts, cfg, "pi0"))
    if pi0 is None:
        zsize = _pick(opts, cfg, "zsize")
        if zsize is None:
            raise ConfigError("give --pi0 or --zsize")
        pi0 = uniform(int(zsize))
    basis = _basis(_pick(opts, cfg, "basis"))
    random_d = _pick(opts, cfg, "random_d")
    if basis is None and random_d is not None:
        basis = FeatureBasis(stream(seed, 2**32).standard_normal((int(random_d), len(pi0))))
    spec = TestSpec(pi0, 0.0, basis)
    report = monte_carlo_variance(
        spec,
        n=int(_pick(opts, cfg, "n", 2000)),
        trials=int(_pick(opts, cfg, "trials", 20000)),
        seed=RngSeed(seed, int(_pick(opts, cfg, "stream_index", 0))),
        workers=int(_pick(opts, cfg, "workers", 1)),
    )
    out = _pick(opts, cfg, "out")
    if out:
        Path(out).write_text(report.to_csv())
    click.echo(report.to_json())


@main.command()
@click.option("--spec", "spec_path", default=None, help="JSON file: pi0, alternates, optional weights.")
@click.option("--d", "d", type=int, default=None, help="Rank bound.")
@click.option("--alpha", default=None, help="Step size, or 'auto' for 1/L.")
@click.option("--eps", type=float, default=None, help="Stopping threshold on ||X(k+1) - X(k)||.")
@click.option("--max-iter", "max_iter", type=int, default=None)
@click.option("--init", type=click.Choice(["zero", "warm_start"]), default=None)
@click.option("--result", default=None, help="Also write the SVP result (with trace) as JSON here.")
@click.option("--xstar-csv", "xstar_csv", default=None, help="Dump the solution matrix as CSV.")
@common
@_guard
def extract(**opts):
    """Extract a d-dimensional feature basis from alternates by SVP."""
    cfg = _load_config(opts["config"])
    spec_path = _pick(opts, cfg, "spec_path", cfg.get("spec"))
    if spec_path is None:
        raise ConfigError("--spec is required")
    raw = json.loads(Path(spec_path).read_text())
    d = _pick(opts, cfg, "d")
    if d is None:
        raise ConfigError("--d is required")
    pi0, alts = raw["pi0"], raw["alternates"]
    if raw.get("weights") is None:
        spec = ObjectiveSpec.with_inverse_kl_weights(pi0, alts, int(d))
    else:
        spec = ObjectiveSpec(pi0, alts, raw["weights"], int(d))
    alpha = _pick(opts, cfg, "alpha", "auto")
    svp_cfg = SvpConfig(
        step=None if alpha in (None, "auto") else float(alpha),
        stop_eps=float(_pick(opts, cfg, "eps", 1e-8)),
        max_iter=int(_pick(opts, cfg, "max_iter", 5000)),
        init=_pick(opts, cfg, "init", "warm_start"),
    )
    res = svp_solve(spec, svp_cfg)
    basis = extract_basis(res.x_star, int(d))
    _emit(basis.to_json(), _pick(opts, cfg, "out"))
    if _pick(opts, cfg, "result"):
        Path(_pick(opts, cfg, "result")).write_text(res.to_json() + "\n")
    if _pick(opts, cfg, "xstar_csv"):
        np.savetxt(_pick(opts, cfg, "xstar_csv"), res.x_star, delimiter=",", fmt="%.17g")
    click.echo(
        f"objective={res.objective:.10g} iterations={res.iterations} converged={res.converged} "
        f"basis_rows={basis.d}",
        err=True,
    )


@main.group()
def distinguish():
    """Epsilon-distinguishability certificates and bounds."""


@distinguish.command()
@click.option("--dists", default=None, help="JSON list of distributions (inline or file).")
@click.option("--eps", type=float, default=None, help="Epsilon.")
@common
@_guard
def certify(**opts):
    """Check that a family is epsilon-extremal and pairwise epsilon-distinguishable."""
    cfg = _load_config(opts["config"])
    raw = _pick(opts, cfg, "dists")
    if raw is None:
        raise ConfigError("--dists is required")
    dists = _vector(raw)
    eps = float(_pick(opts, cfg, "eps", 0.01))
    ok = certify_family([as_distribution(p) for p in dists], eps)
    _emit(json.dumps({"certified": ok, "size": len(dists), "eps": eps}), _pick(opts, cfg, "out"))


@distinguish.command()
@click.option("--d", "d", type=int, default=None, help="Dimension.")
@click.option("--zsize", type=int, default=None, help="Alphabet size.")
@click.option("--tau/--no-tau", "tau", default=None,
              help="Brute-force tau on the constructive basis (default: only when zsize <= 12).")
@common
@_guard
def bounds(**opts):
    """Print d,zsize,lower,upper,tau as CSV."""
    cfg = _load_config(opts["config"])
    d = int(_pick(opts, cfg, "d"))
    m = int(_pick(opts, cfg, "zsize"))
    want_tau = _pick(opts, cfg, "tau")
    if want_tau is None:
        want_tau = m <= 12
    tau = ""
    if want_tau:
        basis = construct_indicator_basis(m, 1) if d == 1 else construct_kronecker_basis(m, d)
        tau = str(count_halfspace_subsets(basis))
    lines = ["d,zsize,lower,upper,tau", f"{d},{m},{lower_bound(d, m)!r},{upper_bound(d, m)!r},{tau}"]
    _emit("\n".join(lines), _pick(opts, cfg, "out"))


@main.command()
@click.option("--workers", type=int, default=None, help="Worker processes for the rank sweep.")
@common
@_guard
def experiment(**opts):
    """Run the training/testing ratio experiment and write CSV."""
    raw = _load_config(opts["config"])
    workers = int(_pick(opts, raw, "workers", 1))
    out = _pick(opts, raw, "out")
    raw.pop("workers", None)
    raw.pop("out", None)
    if opts["seed"] is not None:
        raw["master_seed"] = opts["seed"]
    rows = run_experiment(ExperimentConfig.from_dict(raw), workers=workers)
    if out:
        emit_csv(rows, out)
    else:
        click.echo(format_csv(rows), nl=False)


if __name__ == "__main__":
    main()
