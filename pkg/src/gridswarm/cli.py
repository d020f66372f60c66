"""Experiment runner CLI.

Verbs: train-conflict, train-free, run, sweep, defaults.  Configuration is
a flat YAML document (print a template with `gridswarm defaults`); all
randomness flows from a master seed through a splitmix64 stream so every
output is bit-reproducible.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from gridswarm import qnet
from gridswarm.motion import KinematicParams
from gridswarm.sim import MissionConfig, Mission
from gridswarm.world import ArenaConfig, ResourceVector, Target

_U64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(seed: int, index: int) -> int:
    """Child seed `index` of the stream rooted at `seed` (splitmix64 step)."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


@dataclass
class DistributionSpec:
    kind: str = "uniform"  # uniform | clustered
    total_targets: int = 15
    mrt_fraction: float = 0.2
    mrt_visits: int = 2
    cluster_count: int | None = None  # None: random in [1, 5] per mission
    cluster_radius: float = 10.0

    def __post_init__(self):
        if self.kind not in ("uniform", "clustered"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.total_targets < 0:
            raise ValueError("total_targets must be >= 0")
        if not (0.0 <= self.mrt_fraction <= 1.0):
            raise ValueError("mrt_fraction must lie in [0, 1]")
        if self.cluster_count is not None and not (1 <= self.cluster_count <= 5):
            raise ValueError("cluster_count must lie in [1, 5]")


def generate_scenario(spec: DistributionSpec, arena: ArenaConfig, rng) -> list:
    """Random target set: i.i.d. uniform or clustered positions.

    Clustered: m random centers; each cluster gets floor(total/m) targets
    (the last one takes the remainder), uniform in a disc of the cluster
    radius, clipped to the arena.  The first ceil(fraction * total) targets
    become multi-visit.
    """
    positions = []
    if spec.kind == "uniform":
        for _ in range(spec.total_targets):
            positions.append((rng.uniform(0, arena.width), rng.uniform(0, arena.height)))
    else:
        m = spec.cluster_count or int(rng.integers(1, 6))
        per = spec.total_targets // m
        sizes = [per] * m
        sizes[-1] += spec.total_targets - per * m
        for size in sizes:
            cx = rng.uniform(0, arena.width)
            cy = rng.uniform(0, arena.height)
            for _ in range(size):
                ang = rng.uniform(0, 2 * math.pi)
                rad = spec.cluster_radius * math.sqrt(rng.random())
                positions.append((
                    min(max(cx + rad * math.cos(ang), 0.0), arena.width),
                    min(max(cy + rad * math.sin(ang), 0.0), arena.height),
                ))
    n_mrt = math.ceil(spec.mrt_fraction * spec.total_targets)
    targets = []
    for i, pos in enumerate(positions):
        visits = spec.mrt_visits if i < n_mrt else 1
        targets.append(Target(id=i, position=pos, requirement=ResourceVector((visits,))))
    return targets


DEFAULT_CONFIG = {
    "arena": {
        "width": 90.0,
        "height": 90.0,
        "swarm_bound_radius": 45.0,
        "global_sensor_range": 20.0,
        "local_sensor_range": 10.0,
        "neutralize_radius": 1.0,
    },
    "robots": 6,
    "max_time": 300.0,
    "spawn_box": [0.0, 0.0, 20.0, 20.0],
    "grid": [7, 7],
    "kinematics": {"v_max": 15.0, "heading_gain": 1.0, "omega_max": 2.0, "dt": 0.1},
    "pi": {"kp": 0.2, "ki": 0.003},
    "targets": {
        "kind": "uniform",
        "total": 15,
        "mrt_fraction": 0.2,
        "mrt_visits": 2,
        "cluster_count": None,
        "cluster_radius": 10.0,
    },
    "sweep": {"axis": "robots", "values": [3, 6, 9], "repetitions": 30},
}

SWEEP_AXES = ("robots", "mrt_percent", "sensor_radius", "distribution")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(path) as f:
        return _merge(copy.deepcopy(DEFAULT_CONFIG), yaml.safe_load(f) or {})


def mission_config_from(cfg: dict, seed: int, log_trajectory=False) -> MissionConfig:
    return MissionConfig(
        arena=ArenaConfig(**cfg["arena"]),
        n_robots=int(cfg["robots"]),
        kinematics=KinematicParams(**cfg["kinematics"]),
        pi_kp=cfg["pi"]["kp"],
        pi_ki=cfg["pi"]["ki"],
        grid_rows=int(cfg["grid"][0]),
        grid_cols=int(cfg["grid"][1]),
        max_time=float(cfg["max_time"]),
        seed=seed,
        spawn_box=tuple(cfg["spawn_box"]),
        log_trajectory=log_trajectory,
    )


def distribution_from(cfg: dict) -> DistributionSpec:
    t = cfg["targets"]
    return DistributionSpec(
        kind=t["kind"],
        total_targets=int(t["total"]),
        mrt_fraction=float(t["mrt_fraction"]),
        mrt_visits=int(t["mrt_visits"]),
        cluster_count=t.get("cluster_count"),
        cluster_radius=float(t.get("cluster_radius", 10.0)),
    )


def _load_policy(path) -> qnet.QNetwork:
    if not Path(path).is_file():
        raise FileNotFoundError(f"policy file not found: {path}")
    return qnet.load_weights(path)


def _apply_axis(cfg: dict, axis: str, value):
    cfg = json.loads(json.dumps(cfg))  # deep copy
    if axis == "robots":
        cfg["robots"] = int(value)
    elif axis == "mrt_percent":
        cfg["targets"]["mrt_fraction"] = float(value) / 100.0
    elif axis == "sensor_radius":
        cfg["arena"]["global_sensor_range"] = float(value)
    elif axis == "distribution":
        cfg["targets"]["kind"] = str(value)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return cfg


def execute_run(cfg: dict, child_seed: int, conflict_net, free_net,
                log_trajectory=False):
    """One seeded mission: scenario from one child stream, sim from another."""
    scen_rng = np.random.default_rng(splitmix64(child_seed, 0))
    targets = generate_scenario(distribution_from(cfg), ArenaConfig(**cfg["arena"]),
                                scen_rng)
    mconfig = mission_config_from(cfg, splitmix64(child_seed, 1), log_trajectory)
    mission = Mission(mconfig, targets, conflict_net, free_net)
    return mission.run()


_WORKER = {}


def _worker_init(conflict_path, free_path):
    _WORKER["conflict"] = _load_policy(conflict_path)
    _WORKER["free"] = _load_policy(free_path)


def _worker_run(job):
    axis_value, rep, child_seed, cfg = job
    result = execute_run(cfg, child_seed, _WORKER["conflict"], _WORKER["free"])
    return (axis_value, rep, child_seed, result.total_time, result.search_time,
            result.collisions, int(result.success))


def run_sweep(cfg: dict, master_seed: int, conflict_path, free_path,
              out_dir: Path, jobs: int = 1) -> dict:
    axis = cfg["sweep"]["axis"]
    values = cfg["sweep"]["values"]
    reps = int(cfg["sweep"]["repetitions"])
    if not values:
        raise ValueError("sweep axis values must be non-empty")
    if reps < 1:
        raise ValueError("repetitions must be >= 1")
    job_list = []
    idx = 0
    for value in values:
        run_cfg = _apply_axis(cfg, axis, value)
        for rep in range(reps):
            job_list.append((value, rep, splitmix64(master_seed, idx), run_cfg))
            idx += 1
    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_worker_init,
            initargs=(conflict_path, free_path),
        ) as pool:
            rows = list(pool.map(_worker_run, job_list, chunksize=4))
    else:
        _worker_init(conflict_path, free_path)
        rows = [_worker_run(j) for j in job_list]
    rows.sort(key=lambda r: (values.index(r[0]), r[1]))

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "runs.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["axis_value", "repetition", "child_seed", "mission_time",
                    "search_time", "collisions", "success"])
        w.writerows(rows)

    summary = []
    for value in values:
        times = [r[3] for r in rows if r[0] == value]
        succ = [r[6] for r in rows if r[0] == value]
        summary.append({
            "axis": axis,
            "axis_value": value,
            "runs": len(times),
            "mean_time": float(np.mean(times)),
            "std_time": float(np.std(times)) if len(times) > 1 else 0.0,
            "success_rate": float(np.mean(succ)),
        })
    with open(out_dir / "summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(summary[0].keys()))
        w.writeheader()
        w.writerows(summary)
    with open(out_dir / "summary.json", "w") as f:
        json.dump({"axis": axis, "master_seed": master_seed, "rows": summary},
                  f, indent=2, sort_keys=True)
    return {"rows": rows, "summary": summary}


def write_trajectory(result, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "robot_id", "x", "y", "heading", "scenario", "action",
                    "assigned_target"])
        w.writerows(result.trajectory or [])


# ---------------------------------------------------------------------------

# Tuned training budgets: the conflict net needs long low-epsilon self-play
# with a late learning-rate anneal to settle into a stable policy; the free
# net converges quickly on the 3x3 gridworld.
CONFLICT_TRAIN_DEFAULTS = {
    "episodes": 100_000,
    "learning_rate": 5e-3,
    "eps_decay_fraction": 0.4,
    "eps_end": 0.005,
    "lr_end_scale": 0.001,
}
FREE_TRAIN_DEFAULTS = {"episodes": 20_000, "max_steps": 20}


def _trainer_config(args, defaults: dict) -> qnet.TrainerConfig:
    kw = dict(defaults)
    if args.episodes is not None:
        kw["episodes"] = args.episodes
    return qnet.TrainerConfig(**kw)


def cmd_train_conflict(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = None
    for n_agents in range(2, args.agents + 1):
        config = _trainer_config(args, CONFLICT_TRAIN_DEFAULTS)
        net, log = qnet.train_conflict_selfplay(
            config, n_agents=n_agents, seed=splitmix64(args.seed, n_agents),
            base_net=net,
        )
        qnet.save_weights(net, out / f"conflict_{n_agents}agents.qnet")
        qnet.save_reward_log(log, out / f"conflict_{n_agents}agents_rewards.csv")
        print(f"trained conflict policy ({n_agents} agents): "
              f"final block reward {log[-1][1]:.3f}")
    qnet.save_weights(net, out / "conflict.qnet")
    print(f"wrote {out / 'conflict.qnet'}")


def cmd_train_free(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _trainer_config(args, FREE_TRAIN_DEFAULTS)
    net, log = qnet.train_free(config, seed=args.seed)
    qnet.save_weights(net, out / "free.qnet")
    qnet.save_reward_log(log, out / "free_rewards.csv")
    print(f"trained conflict-free policy: final block reward {log[-1][1]:.3f}")
    print(f"wrote {out / 'free.qnet'}")


def cmd_run(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    conflict_net = _load_policy(args.policy_conflict)
    free_net = _load_policy(args.policy_free)
    result = execute_run(cfg, splitmix64(args.seed, 0), conflict_net, free_net,
                         log_trajectory=True)
    write_trajectory(result, out / "trajectory.csv")
    with open(out / "summary.json", "w") as f:
        json.dump(result.summary(), f, indent=2, sort_keys=True)
    print(json.dumps(result.summary(), indent=2, sort_keys=True))


def cmd_sweep(args):
    cfg = load_config(args.config)
    out = run_sweep(cfg, args.seed, args.policy_conflict, args.policy_free,
                    Path(args.out), jobs=args.jobs)
    for row in out["summary"]:
        print(f"{row['axis']}={row['axis_value']}: "
              f"time {row['mean_time']:.1f} +- {row['std_time']:.1f} s, "
              f"success {row['success_rate']:.2%}")


def cmd_defaults(_args):
    print(yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridswarm",
        description="Decentralized search-and-neutralize experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-conflict", help="self-play train the conflict net")
    p.add_argument("--out", default="policies")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--agents", type=int, default=2, choices=(2, 3, 4),
                   help="train incrementally up to this many agents")
    p.set_defaults(func=cmd_train_conflict)

    p = sub.add_parser("train-free", help="train the conflict-free net")
    p.add_argument("--out", default="policies")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_train_free)

    p = sub.add_parser("run", help="run one mission and dump its trajectory")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--policy-conflict", required=True)
    p.add_argument("--policy-free", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Monte Carlo sweep over one axis")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--policy-conflict", required=True)
    p.add_argument("--policy-free", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("defaults", help="print the default configuration")
    p.set_defaults(func=cmd_defaults)

    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
