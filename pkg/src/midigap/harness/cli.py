"""``midigap`` command line: synth | partition | fit | predict | update | optimize | eval | pipeline.

Every subcommand writes its artifacts atomically plus a manifest recording
inputs (with content hashes), seeds, library versions and stage timings.
Failures exit with the ``exit_code`` of the raised error class (2 usage or
file format, 3 insufficient demos, 4 spec mismatch, 5 infeasible, 6 no
convergence).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .. import kernels
from ..digap import fit
from ..errors import MidigapError, SpecMismatchError, UsageError
from ..mixture import MiDiGaP, SkillChain, fit_mixture, regress
from ..partition import Method, Partition, partition_demos
from ..updating import DEFAULT_SAMPLES, DEFAULT_Z, constraint_from_json, update
from . import io
from .metrics import ari, evaluate
from .synth import SynthSpec, generate

STAGES = ("synth", "partition", "fit", "predict", "update", "optimize", "eval")


def stage_seed(root: int, stage: str) -> int:
    """Independent per-stage seed derived from one root seed."""
    ss = np.random.SeedSequence(int(root), spawn_key=(STAGES.index(stage),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version(), "kernel_backend": kernels.BACKEND}
    for pkg in ("midigap", "numpy", "scipy", "scikit-learn"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


class Run:
    """Collects timings, inputs and outputs for the manifest."""

    def __init__(self, command, argv):
        self.command, self.argv = command, list(argv)
        self.inputs, self.outputs, self.seeds, self.timings = {}, {}, {}, {}
        self._t = {}

    def input(self, path):
        self.inputs[str(path)] = _sha256(path)
        return path

    def output(self, path):
        self.outputs[str(path)] = _sha256(path)

    def start(self, stage):
        self._t[stage] = time.perf_counter()

    def stop(self, stage):
        self.timings[stage] = time.perf_counter() - self._t.pop(stage)

    def write_manifest(self, path):
        io.write_records(path, "manifest", [{
            "command": self.command, "argv": self.argv, "inputs": self.inputs, "outputs": self.outputs,
            "seeds": self.seeds, "timings": self.timings, "versions": _versions(),
        }])


def _manifest_path(args, out):
    return Path(args.manifest) if getattr(args, "manifest", None) else Path(str(out) + ".manifest")


def _emit(summary):
    print(json.dumps(summary, sort_keys=True, default=float))


# -- stages ----------------------------------------------------------------


def do_synth(cfg: dict, seed: int, out, run: Run) -> dict:
    spec = SynthSpec.from_json({**cfg, "seed": seed})
    run.start("synth")
    ds = generate(spec)
    run.stop("synth")
    io.save_dataset(out, ds.demos, ds.labels, ds.ground_truth, spec.to_json(), ds.joints)
    run.output(out)
    return {"N": len(ds.demos), "T": spec.T, "family": spec.family.value}


def do_partition(data: dict, cfg: dict, seed: int, out, run: Run) -> Partition:
    run.start("partition")
    p = partition_demos(data["demos"], method=cfg.get("method", "kmeans_bic"), T_prime=cfg.get("T_prime", 20),
                        k_max=cfg.get("k_max"), restarts=cfg.get("restarts", 10), seed=seed,
                        eps=cfg.get("eps"), min_pts=cfg.get("min_pts", 2))
    run.stop("partition")
    io.save_partition(out, p)
    run.output(out)
    return p


def do_fit(data: dict, partition: Partition | None, cfg: dict, out, run: Run) -> MiDiGaP:
    demos = data["demos"]
    if partition is None:
        partition = Partition(np.zeros(len(demos), dtype=np.int64), Method.KMEANS_BIC, 0,
                              tuple(d.demo_id or str(i) for i, d in enumerate(demos)))
    run.start("fit")
    if len(demos) < 2:
        fit(demos)  # raises the insufficient-demos error
    model = fit_mixture(demos, partition, **cfg)
    run.stop("fit")
    io.save_model(out, model)
    run.output(out)
    return model


def do_update(model: MiDiGaP, cfg: dict, seed: int, out, run: Run):
    constraints = [constraint_from_json(c) for c in cfg["constraints"]]
    rng = np.random.default_rng(seed)
    reports = []
    run.start("update")
    for c in constraints:
        model, rep = update(model, c, z=cfg.get("z", DEFAULT_Z), q=cfg.get("q", 1.0),
                            n_samples=cfg.get("n_samples", DEFAULT_SAMPLES), rng=rng,
                            sampler=cfg.get("sampler", "qmc"))
        reports.append({"constraint": c.kind, **rep.to_json()})
    run.stop("update")
    io.save_model(out, model)
    run.output(out)
    return model, reports


def _start_config(chain, g, q0, seed):
    from ..errors import IKNotConvergedError
    from ..vapor.ik import ik_solve

    if q0 is not None:
        return np.asarray(q0, dtype=float)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(20):
        try:
            r = ik_solve(chain, g.mu[0], g.var[0], q_init=rng.uniform(chain.lower, chain.upper))
        except IKNotConvergedError as err:
            r = err.result
        if best is None or r.cost < best.cost:
            best = r
        if r.converged:
            break
    return best.q


def do_optimize(model: MiDiGaP, cfg: dict, seed: int, out, run: Run) -> dict:
    from ..vapor.kinematics import load_chain
    from ..vapor.optimize import optimize_path
    from ..errors import InfeasiblePathError

    chain = load_chain(cfg.get("chain", "ur5"))
    mode = cfg.get("mode")
    mode = int(np.argmax(model.priors)) if mode is None else int(mode)
    g = model.modes[mode]
    run.start("optimize")
    q0 = _start_config(chain, g, cfg.get("q0"), seed)
    kw = {k: cfg[k] for k in ("lam_q", "lam_e", "z", "max_outer") if k in cfg}
    try:
        res = optimize_path(chain, g, q0, **kw)
        status = "feasible"
    except InfeasiblePathError as err:
        res, status = err.result, "infeasible"
    run.stop("optimize")
    rec = {"type": "joint_path", "status": status, "mode": mode, "chain": chain.name, "q0": q0.tolist(),
           "Q": res.Q.tolist(), "fk": res.poses.tolist(), "nll": res.nll, "objective": res.objective,
           "max_violation": res.max_violation, "outer_iterations": res.outer_iterations}
    io.write_records(out, "joint_path", [rec])
    run.output(out)
    if status != "feasible":
        err = InfeasiblePathError(f"mode {mode}: path leaves the z tube by {res.max_violation:.3g}",
                                  res.max_violation, res)
        err.summary = {"status": status, "max_violation": res.max_violation, "nll": res.nll}
        raise err
    return {"status": status, "mode": mode, "nll": res.nll, "max_violation": res.max_violation,
            "wall_clock_s": run.timings["optimize"]}


def _match_truth(model: MiDiGaP, data: dict):
    """Ground-truth trajectory for every mode (majority label of its part)."""
    truth = data["ground_truth"]
    if not truth:
        return [None] * model.M
    if len(truth) == 1 or model.partition is None or data["labels"] is None:
        return [truth[0]] * model.M
    out = []
    for idx in model.partition.parts():
        lab = np.bincount(np.asarray(data["labels"])[idx]).argmax()
        out.append(truth[lab])
    return out


def do_eval(model: MiDiGaP, data: dict, out, run: Run) -> dict:
    run.start("eval")
    modes = []
    for m, (g, ref) in enumerate(zip(model.modes, _match_truth(model, data))):
        if ref is not None and ref.spec != g.spec:
            raise SpecMismatchError(f"model is on {g.spec.to_json()}, reference on {ref.spec.to_json()}")
        rep = evaluate(g, ref)
        modes.append({"mode": m, "prior": float(model.priors[m]), **rep.to_json()})
    report = {"M": model.M, "modes": modes}
    if data["labels"] is not None and model.partition is not None:
        report["ari"] = ari(data["labels"], model.partition.labels)
    run.stop("eval")
    io.save_report(out, "metrics", report)
    run.output(out)
    return report


# -- subcommand handlers ---------------------------------------------------


def cmd_synth(args, run):
    cfg = io.load_json(run.input(args.config)) if args.config else {}
    cfg = cfg.get("synth", cfg)
    for k in ("family", "N", "T", "noise"):
        v = getattr(args, k)
        if v is not None:
            cfg[k] = v
    if "family" not in cfg:
        raise UsageError("synth: --family or --config is required")
    run.seeds["synth"] = args.seed
    return do_synth(cfg, args.seed, args.out, run)


def cmd_partition(args, run):
    data = io.load_dataset(run.input(args.data))
    cfg = {"method": args.method, "T_prime": args.t_prime, "k_max": args.k_max,
           "restarts": args.restarts, "eps": args.eps, "min_pts": args.min_pts}
    run.seeds["partition"] = args.seed
    p = do_partition(data, cfg, args.seed, args.out, run)
    summary = {"M": p.M, "sizes": p.sizes().tolist(), "method": p.method.value}
    if data["labels"] is not None:
        summary["ari"] = ari(data["labels"], p.labels)
    return summary


def cmd_fit(args, run):
    data = io.load_dataset(run.input(args.data))
    part = io.load_partition(run.input(args.partition)) if args.partition else None
    cfg = {"sample_rate_hz": args.rate} if args.rate else {}
    model = do_fit(data, part, cfg, args.out, run)
    return {"M": model.M, "T": model.T, "priors": model.priors.tolist()}


def cmd_predict(args, run):
    model = io.load_model(run.input(args.model))
    if isinstance(model, SkillChain):
        raise UsageError("predict: expects a mixture model file, not a skill chain")
    rng = None if args.seed is None else np.random.default_rng(args.seed)
    run.seeds["predict"] = args.seed
    run.start("predict")
    tr = regress(model, args.mode, rng)
    run.stop("predict")
    io.write_records(args.out, "trajectory", [io.trajectory_record(tr)])
    run.output(args.out)
    return {"T": len(tr), "wall_clock_s": run.timings["predict"]}


def cmd_update(args, run):
    model = io.load_model(run.input(args.model))
    cons = io.load_constraints(run.input(args.constraints))
    cfg = {"constraints": [c.to_json() for c in cons], "z": args.z, "q": args.q,
           "n_samples": args.samples, "sampler": args.sampler}
    run.seeds["update"] = args.seed
    post, reports = do_update(model, cfg, args.seed, args.out, run)
    if args.report:
        io.save_report(args.report, "update_report", {"updates": reports})
        run.output(args.report)
    return {"priors": post.priors.tolist()}


def cmd_optimize(args, run):
    model = io.load_model(run.input(args.model))
    chain = args.chain
    if Path(chain).exists():
        run.input(chain)
    cfg = {"chain": chain, "mode": args.mode, "lam_q": args.lam_q, "z": args.z, "max_outer": args.max_outer}
    if args.q0:
        cfg["q0"] = [float(v) for v in args.q0.split(",")]
    run.seeds["optimize"] = args.seed
    return do_optimize(model, cfg, args.seed, args.out, run)


def cmd_eval(args, run):
    data = io.load_dataset(run.input(args.data))
    if args.prediction:
        _, recs = io.read_records(run.input(args.prediction), "trajectory")
        pred = io.trajectory_from_record(recs[0])
        ref = data["ground_truth"][args.truth_mode] if data["ground_truth"] else data["demos"][0]
        if pred.spec != ref.spec:
            raise SpecMismatchError(f"prediction is on {pred.spec.to_json()}, reference on {ref.spec.to_json()}")
        run.start("eval")
        report = {"modes": [evaluate(pred, ref).to_json()]}
        run.stop("eval")
        io.save_report(args.out, "metrics", report)
        run.output(args.out)
        return report
    model = io.load_model(run.input(args.model))
    return do_eval(model, data, args.out, run)


def cmd_pipeline(args, run):
    cfg = io.load_json(run.input(args.config))
    root = int(cfg.get("seed", 0)) if args.seed is None else args.seed
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.seeds = {"root": root, **{s: stage_seed(root, s) for s in STAGES}}
    summary = {"synth": do_synth(cfg["synth"], run.seeds["synth"], out / "dataset.jsonl", run)}
    data = io.load_dataset(out / "dataset.jsonl")
    part = None
    if cfg.get("partition") is not None:
        part = do_partition(data, cfg["partition"], run.seeds["partition"], out / "partition.jsonl", run)
        summary["partition"] = {"M": part.M, "sizes": part.sizes().tolist()}
    model = do_fit(data, part, dict(cfg.get("fit", {})), out / "model.jsonl", run)
    if cfg.get("update") is not None:
        model, reports = do_update(model, cfg["update"], run.seeds["update"], out / "model_updated.jsonl", run)
        io.save_report(out / "update_report.jsonl", "update_report", {"updates": reports})
        run.output(out / "update_report.jsonl")
        summary["update"] = {"priors": model.priors.tolist()}
    if cfg.get("optimize") is not None:
        summary["optimize"] = do_optimize(model, cfg["optimize"], run.seeds["optimize"],
                                          out / "joint_path.jsonl", run)
        summary["optimize"].pop("wall_clock_s")
    report = do_eval(model, data, out / "metrics.jsonl", run)
    summary["eval"] = {k: report[k] for k in ("M", "ari") if k in report}
    summary["eval"]["rmse"] = [m["rmse"] for m in report["modes"]]
    return summary


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="midigap", description="Trajectory mixtures on pose manifolds.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", help="JSON with SynthSpec fields (or a pipeline config)")
    s.add_argument("--family")
    s.add_argument("--N", type=int)
    s.add_argument("--T", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("partition", help="cluster demonstrations into modes")
    s.add_argument("--data", required=True)
    s.add_argument("--method", default="kmeans_bic", choices=[m.value for m in Method])
    s.add_argument("--t-prime", type=int, default=20)
    s.add_argument("--k-max", type=int)
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--eps", type=float)
    s.add_argument("--min-pts", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("fit", help="fit one DiGaP per part")
    s.add_argument("--data", required=True)
    s.add_argument("--partition")
    s.add_argument("--rate", type=float)
    s.add_argument("--out", required=True)

    s = sub.add_parser("predict", help="regress a mean trajectory")
    s.add_argument("--model", required=True)
    s.add_argument("--mode", type=int)
    s.add_argument("--seed", type=int, help="draw the mode from the priors with this seed")
    s.add_argument("--out", required=True)

    s = sub.add_parser("update", help="condition a model on region evidence")
    s.add_argument("--model", required=True)
    s.add_argument("--constraints", required=True)
    s.add_argument("--z", type=float, default=DEFAULT_Z)
    s.add_argument("--q", type=float, default=1.0)
    s.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    s.add_argument("--sampler", default="qmc", choices=["qmc", "mc"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report")
    s.add_argument("--out", required=True)

    s = sub.add_parser("optimize", help="joint path through a mode's tube")
    s.add_argument("--model", required=True)
    s.add_argument("--chain", default="ur5", help="built-in chain name or chain JSON file")
    s.add_argument("--q0", help="comma-separated start configuration (default: IK of the first mean)")
    s.add_argument("--mode", type=int)
    s.add_argument("--lam-q", type=float, default=0.1)
    s.add_argument("--z", type=float, default=DEFAULT_Z)
    s.add_argument("--max-outer", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="metrics against ground truth")
    s.add_argument("--data", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--prediction")
    s.add_argument("--truth-mode", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("pipeline", help="synth -> partition -> fit -> update -> optimize -> eval")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)

    for s in sub.choices.values():
        s.add_argument("--manifest", help="manifest path (default: <out>.manifest)")
    return p


HANDLERS = {"synth": cmd_synth, "partition": cmd_partition, "fit": cmd_fit, "predict": cmd_predict,
            "update": cmd_update, "optimize": cmd_optimize, "eval": cmd_eval, "pipeline": cmd_pipeline}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    run = Run(args.command, argv)
    out = Path(args.out_dir) / "manifest" if args.command == "pipeline" else Path(args.out)
    code = 0
    try:
        _emit({"command": args.command, "ok": True, **HANDLERS[args.command](args, run)})
    except MidigapError as err:
        code = err.exit_code
        _emit({"command": args.command, "ok": False, "error": type(err).__name__, "message": str(err),
               **getattr(err, "summary", {})})
    if args.manifest or args.command == "pipeline" or run.outputs:
        run.write_manifest(_manifest_path(args, out) if args.command != "pipeline"
                           else Path(args.manifest or out.with_suffix(".jsonl")))
    return code
