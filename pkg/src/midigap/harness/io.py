"""Line-delimited JSON artifacts.

Every file starts with a header line ``{"format": "midigap", "kind": ...,
"schema_version": 1}`` followed by one record per line. Keys are sorted and
floats are written with their shortest round-trip repr, so save -> load ->
save reproduces the same bytes. Writes go to a temporary file that is
renamed into place.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from ..digap import DiGaP, Trajectory
from ..errors import FileFormatError
from ..manifold import ManifoldSpec
from ..mixture import MiDiGaP, SkillChain
from ..partition import Partition
from ..updating import Constraint, constraint_from_json

FORMAT = "midigap"
SCHEMA_VERSION = 1


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_text_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_records(path, kind: str, records) -> None:
    lines = [dumps({"format": FORMAT, "kind": kind, "schema_version": SCHEMA_VERSION})]
    lines.extend(dumps(r) for r in records)
    write_text_atomic(path, "\n".join(lines) + "\n")


def read_records(path, kind: str | None = None) -> tuple[str, list]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc.strerror}") from None
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:] if line.strip()]
    except (IndexError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: not a line-delimited JSON artifact ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise FileFormatError(f"{path}: missing midigap header")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise FileFormatError(f"{path}: unsupported schema version {header.get('schema_version')}")
    if kind is not None and header.get("kind") != kind:
        raise FileFormatError(f"{path}: expected a {kind} file, found {header.get('kind')}")
    return header["kind"], records


# -- encoders --------------------------------------------------------------


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def trajectory_record(tr: Trajectory, **extra) -> dict:
    return {"type": "trajectory", "demo_id": tr.demo_id, "spec": tr.spec.to_json(),
            "coords": _arr(tr.coords), "aux": _arr(tr.aux), **extra}


def trajectory_from_record(r) -> Trajectory:
    return Trajectory(ManifoldSpec.from_json(r["spec"]), np.array(r["coords"], dtype=float),
                      None if r.get("aux") is None else np.array(r["aux"], dtype=float), r.get("demo_id", ""))


def digap_record(g: DiGaP, **extra) -> dict:
    return {"type": "digap", "spec": g.spec.to_json(), "mu": _arr(g.mu), "var": _arr(g.var),
            "sample_rate_hz": float(g.sample_rate_hz), "aux_mu": _arr(g.aux_mu), "aux_var": _arr(g.aux_var),
            **extra}


def digap_from_record(r) -> DiGaP:
    opt = lambda k: None if r.get(k) is None else np.array(r[k], dtype=float)  # noqa: E731
    return DiGaP(ManifoldSpec.from_json(r["spec"]), np.array(r["mu"], dtype=float),
                 np.array(r["var"], dtype=float), float(r["sample_rate_hz"]), opt("aux_mu"), opt("aux_var"))


def partition_record(p: Partition) -> dict:
    bic = {str(k): (None if isinstance(v, float) and math.isinf(v) else v) for k, v in p.bic.items()}
    return {"type": "partition", "labels": p.labels.tolist(), "method": p.method.value,
            "subsample_length": int(p.subsample_length), "demo_ids": list(p.demo_ids), "bic": bic}


def partition_from_record(r) -> Partition:
    bic = {}
    for k, v in r.get("bic", {}).items():
        bic[int(k) if k.isdigit() else k] = math.inf if v is None else v
    return Partition(np.array(r["labels"], dtype=np.int64), r["method"], int(r["subsample_length"]),
                     tuple(r["demo_ids"]), bic)


def mixture_records(model: MiDiGaP, skill: int | None = None) -> list:
    head = {"type": "mixture", "priors": _arr(model.priors), "M": model.M,
            "partition": None if model.partition is None else partition_record(model.partition)}
    if skill is not None:
        head["skill"] = skill
    out = [head]
    for m, g in enumerate(model.modes):
        extra = {"mode": m} if skill is None else {"mode": m, "skill": skill}
        out.append(digap_record(g, **extra))
    return out


def _mixture_from(head, modes) -> MiDiGaP:
    part = None if head.get("partition") is None else partition_from_record(head["partition"])
    return MiDiGaP(np.array(head["priors"], dtype=float), tuple(modes), part)


def mixture_from_records(records) -> MiDiGaP:
    heads = [r for r in records if r["type"] == "mixture"]
    if len(heads) != 1:
        raise FileFormatError("a model file holds exactly one mixture record")
    modes = sorted((r for r in records if r["type"] == "digap"), key=lambda r: r["mode"])
    return _mixture_from(heads[0], [digap_from_record(r) for r in modes])


def chain_records(chain: SkillChain) -> list:
    out = [{"type": "chain", "initial": _arr(chain.initial),
            "transitions": [_arr(P) for P in chain.transitions],
            "provenance": {k: str(v) for k, v in chain.provenance.items()}}]
    for j, s in enumerate(chain.skills):
        out.extend(mixture_records(s, skill=j))
    return out


def chain_from_records(records) -> SkillChain:
    head = next(r for r in records if r["type"] == "chain")
    skills = []
    j = 0
    while True:
        mh = [r for r in records if r["type"] == "mixture" and r.get("skill") == j]
        if not mh:
            break
        modes = sorted((r for r in records if r["type"] == "digap" and r.get("skill") == j),
                       key=lambda r: r["mode"])
        skills.append(_mixture_from(mh[0], [digap_from_record(r) for r in modes]))
        j += 1
    return SkillChain(tuple(skills), np.array(head["initial"], dtype=float),
                      tuple(np.array(P, dtype=float) for P in head["transitions"]), dict(head["provenance"]))


# -- file-level helpers ----------------------------------------------------


def save_dataset(path, demos, labels=None, ground_truth=(), synth=None, joints=None):
    recs = []
    if synth is not None:
        recs.append({"type": "synth", "spec": synth})
    for i, d in enumerate(demos):
        extra = {}
        if labels is not None:
            extra["label"] = int(labels[i])
        if joints is not None:
            extra["joints"] = _arr(joints[i])
        recs.append(trajectory_record(d, **extra))
    for m, g in enumerate(ground_truth):
        recs.append({**trajectory_record(g), "type": "truth", "mode": m})
    write_records(path, "dataset", recs)


def load_dataset(path) -> dict:
    _, recs = read_records(path, "dataset")
    demos = [trajectory_from_record(r) for r in recs if r["type"] == "trajectory"]
    labels = [r["label"] for r in recs if r["type"] == "trajectory" and "label" in r]
    truth = [trajectory_from_record(r) for r in sorted((r for r in recs if r["type"] == "truth"),
                                                       key=lambda r: r["mode"])]
    synth = next((r["spec"] for r in recs if r["type"] == "synth"), None)
    return {"demos": demos, "labels": np.array(labels) if len(labels) == len(demos) and labels else None,
            "ground_truth": truth, "synth": synth}


def save_model(path, model: MiDiGaP | SkillChain):
    if isinstance(model, SkillChain):
        write_records(path, "chain", chain_records(model))
    else:
        write_records(path, "model", mixture_records(model))


def load_model(path) -> MiDiGaP | SkillChain:
    kind, recs = read_records(path)
    if kind == "model":
        return mixture_from_records(recs)
    if kind == "chain":
        return chain_from_records(recs)
    raise FileFormatError(f"{path}: expected a model or chain file, found {kind}")


def save_partition(path, p: Partition):
    write_records(path, "partition", [partition_record(p)])


def load_partition(path) -> Partition:
    _, recs = read_records(path, "partition")
    return partition_from_record(recs[0])


def save_constraints(path, constraints):
    write_records(path, "constraint", [c.to_json() for c in constraints])


def load_constraints(path) -> list[Constraint]:
    _, recs = read_records(path, "constraint")
    return [constraint_from_json(r) for r in recs]


def save_report(path, kind: str, report: dict):
    write_records(path, kind, [report])


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
