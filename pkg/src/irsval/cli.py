"""Command-line entry point: ingest -> train-sim -> train-agent -> evaluate -> validate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import sys
from functools import cached_property
from pathlib import Path

from . import __version__
from . import agents as ag
from . import data as dt
from . import evaluation as ev
from . import oracle as orc
from . import simulator as sim
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, IRSError
from .plot import line_chart_svg

REFERENCE_MF_RMSE_ML1M = 0.990


def git_blob_hash(path) -> str:
    content = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


class Run:
    """Resolved config plus lazily loaded artifacts for one command."""

    def __init__(self, args):
        self.args = args
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        self.cfg = cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.workers = max(1, args.workers)
        self._tuned = {}

    # -- paths and bookkeeping
    @property
    def dataset_path(self) -> Path:
        return self.out / "dataset.irsd"

    @property
    def sim_path(self) -> Path:
        return self.out / "simulator.irsm"

    def inputs(self, *paths) -> dict:
        found = {}
        if self.args.config:
            found["config"] = git_blob_hash(self.args.config)
        for p in paths:
            if Path(p).exists():
                found[Path(p).name] = git_blob_hash(p)
        return found

    def write_json(self, name: str, obj: dict) -> Path:
        path = self.out / name
        path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    def envelope(self, command: str, body: dict, *paths) -> dict:
        return {"command": command, "version": __version__, "config": self.cfg.echo(),
                "inputs": self.inputs(*paths), **body}

    # -- artifacts
    @cached_property
    def split(self) -> dt.Split:
        return dt.split_users(self.raw_dataset.num_users, self.cfg.data.split,
                              self.cfg.data.split_seed)

    @cached_property
    def raw_dataset(self) -> dt.Dataset:
        if not self.dataset_path.exists():
            raise DataError(f"dataset file missing: {self.dataset_path} (run ingest first)")
        return dt.load_dataset(self.dataset_path)

    @cached_property
    def dataset(self) -> dt.Dataset:
        return self.raw_dataset.with_training_users(self.split.train)

    def histories(self, users) -> list[dt.UserHistory]:
        return [self.dataset.users[u] for u in users]

    @cached_property
    def env(self) -> sim.Environment:
        if self.cfg.simulator.kind == "synthetic":
            base = sim.SyntheticEnvironment(self.cfg.simulator.synthetic(self.cfg.data.scale))
            return base.reindexed(self.dataset.user_ids, self.dataset.item_ids)
        if not self.sim_path.exists():
            raise DataError(f"model file missing: {self.sim_path} (run train-sim first)")
        return sim.MFEnvironment(sim.load_mf(self.sim_path))

    @cached_property
    def transitions(self) -> ag.Transitions:
        return ag.build_transitions(self.histories(self.split.train), self.cfg.agent.train_warmup)

    def agent_hyper(self, gamma: float, seed: int) -> ag.AgentHyper:
        hyper = self.cfg.agent.hyper(gamma=gamma, seed=seed)
        if self.cfg.agent.tune:
            if gamma not in self._tuned:
                self._tuned[gamma] = self._tune(hyper)
            lr, wd = self._tuned[gamma]
            hyper = dataclasses.replace(hyper, lr=lr, wd=wd)
        return hyper

    def _tune(self, hyper: ag.AgentHyper) -> tuple[float, float]:
        val = self.histories(self.split.validation)
        _log(f"tuning lr/wd for gamma={hyper.gamma:g} on {len(val)} validation users")

        def train(lr, wd):
            return self._train(dataclasses.replace(hyper, lr=lr, wd=wd))

        return ev.select_hyper(train, self.env, val, self.cfg.eval.horizon,
                               self.cfg.eval.warmup, log=_log)

    def _train(self, hyper: ag.AgentHyper) -> ag.ValueModel:
        scale = self.cfg.data.scale
        return ag.train_value_model(self.transitions, self.dataset.num_items,
                                    (scale.min, scale.max), hyper,
                                    popularity=self.dataset.item_popularity)

    def agent(self, gamma: float, seed: int) -> ag.ValueModel:
        """Trained value model for (gamma, seed), cached under a hyper-parameter hash."""
        hyper = self.agent_hyper(gamma, seed)
        key = json.dumps({"hyper": dataclasses.asdict(hyper),
                          "warmup": self.cfg.agent.train_warmup,
                          "split": dataclasses.asdict(self.split),
                          "dataset": git_blob_hash(self.dataset_path)}, sort_keys=True)
        digest = hashlib.sha1(key.encode()).hexdigest()[:10]
        path = self.out / "agents" / f"agent_g{gamma:g}_s{seed}_{digest}.irsa"
        if path.exists():
            return ag.load_value_model(path)
        _log(f"training value model gamma={gamma:g} seed={seed} on {len(self.transitions)} transitions")
        model = self._train(hyper)
        path.parent.mkdir(parents=True, exist_ok=True)
        ag.save_value_model(model, path)
        return model


# -- commands --------------------------------------------------------------------

def cmd_ingest(run: Run) -> int:
    cfg = run.cfg
    scale = cfg.data.scale
    if cfg.data.source == "synthetic" and not run.args.raw:
        env = sim.SyntheticEnvironment(cfg.simulator.synthetic(scale))
        records = sim.generate_synthetic_logs(env, cfg.simulator.log_length, cfg.simulator.seed + 1)
        name, source_paths = "synthetic", []
    else:
        raw = Path(run.args.raw) if run.args.raw else cfg.data_path()
        if not raw.exists():
            raise DataError(f"raw rating file not found: {raw}")
        fmt = run.args.format or cfg.data.format
        try:
            fmt = dt.RatingFormat.parse(fmt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _log(f"parsing {raw} as {fmt.value}")
        records = dt.read_ratings_file(raw, fmt)
        name, source_paths = raw.parent.name or raw.stem, [raw]
    k = run.args.k_core if run.args.k_core is not None else cfg.data.k_core
    filtered = dt.k_core_filter(records, k)
    dataset = dt.build_dataset(filtered, scale)
    dt.save_dataset(dataset, run.dataset_path)
    stats = dt.compute_stats(dataset)
    table = stats.table(name)
    print(table)
    (run.out / "stats.txt").write_text(table + "\n", encoding="utf-8")
    run.write_json("stats.json", run.envelope("ingest", {
        "stats": dataclasses.asdict(stats), "k_core": k, "raw_records": len(records),
    }, *source_paths))
    return 0


def cmd_train_sim(run: Run) -> int:
    cfg = run.cfg
    if cfg.simulator.kind == "synthetic":
        print("synthetic simulator is fully defined by the config; nothing to train")
        return 0
    ds = run.raw_dataset
    fit, held = sim.chronological_holdout(ds, cfg.simulator.holdout)
    model = sim.mf_train(*fit, ds.num_users, ds.num_items, ds.scale, cfg.simulator.mf_hyper, log=_log)
    sim.save_mf(model, run.sim_path)
    fit_rmse = sim.rmse(model, *fit)
    held_rmse = sim.rmse(model, *held)
    print(f"{'Simulator':<24}{'fit RMSE':>10}{'held-out RMSE':>15}")
    print(f"{'Matrix Factorization':<24}{fit_rmse:>10.4f}{held_rmse:>15.4f}")
    run.write_json("simulator.json", run.envelope("train-sim", {
        "rmse_fit": fit_rmse, "rmse_heldout": held_rmse,
        "reference_mf_rmse_ml1m": REFERENCE_MF_RMSE_ML1M,
    }, run.dataset_path))
    return 0


def cmd_eval_sim(run: Run) -> int:
    cfg = run.cfg
    if cfg.simulator.kind == "synthetic":
        print("synthetic simulator is exact by construction; RMSE is 0")
        return 0
    if not run.sim_path.exists():
        raise DataError(f"model file missing: {run.sim_path} (run train-sim first)")
    model = sim.load_mf(run.sim_path)
    _, held = sim.chronological_holdout(run.raw_dataset, cfg.simulator.holdout)
    value = sim.rmse(model, *held)
    print(f"{'Simulator':<24}{'held-out RMSE':>15}{'reference':>11}")
    print(f"{'Matrix Factorization':<24}{value:>15.4f}{REFERENCE_MF_RMSE_ML1M:>11.3f}")
    run.write_json("eval_sim.json", run.envelope("eval-sim", {
        "rmse_heldout": value, "reference_mf_rmse_ml1m": REFERENCE_MF_RMSE_ML1M,
    }, run.dataset_path, run.sim_path))
    return 0


def cmd_train_agent(run: Run) -> int:
    gamma = run.args.gamma if run.args.gamma is not None else run.cfg.agent.gamma
    if not 0.0 <= gamma < 1.0:
        raise ConfigError("gamma must be in [0, 1)")
    run.agent(gamma, run.cfg.agent.seed)
    print(f"value model gamma={gamma:g} seed={run.cfg.agent.seed} ready in {run.out / 'agents'}")
    return 0


def _value_report(run: Run, name: str, gamma: float) -> ev.EvalReport:
    e = run.cfg.eval
    users, skipped = ev.eligible(run.histories(run.split.test), e.warmup)
    if not users:
        raise DataError("no eligible test users")
    episodes = []
    for s in e.seeds:
        policy = ag.ValueGreedyPolicy(run.agent(gamma, s), name, e.mask_seen)
        episodes += ev.run_episodes(policy, run.env, users, e.horizon, s, e.warmup, run.workers)
    return ev.summarize(name, episodes, run.env.scale, e.horizon, e.seeds, skipped)


def _format_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_evaluate(run: Run) -> int:
    e = run.cfg.eval
    test = run.histories(run.split.test)
    reports = []
    for name in e.policies:
        if name == "random":
            rep = ev.evaluate(ag.RandomPolicy(run.dataset.num_items, "Random", e.mask_seen),
                              run.env, test, e.horizon, e.seeds, e.warmup, run.workers)
        elif name == "pop":
            rep = ev.evaluate(ag.PopPolicy(run.dataset.item_popularity, "POP", e.mask_seen),
                              run.env, test, e.horizon, e.seeds, e.warmup, run.workers)
        elif name == "greedyrm":
            rep = _value_report(run, "GreedyRM", 0.0)
        else:
            rep = _value_report(run, "DQNR", run.cfg.agent.gamma)
        reports.append(rep)
    paths = [run.dataset_path] + ([run.sim_path] if run.cfg.simulator.kind == "mf" else [])
    print(f"{'Policy':<10}{'RW@T':>9}{'PR@T':>9}{'RC@T':>9}{'users':>7}")
    for rep in reports:
        rep.config = run.envelope("evaluate", {}, *paths)
        run.write_json(f"eval_{rep.policy.lower()}.json", rep.to_dict())
        print(f"{rep.policy:<10}{rep.rw[0]:>9.4f}{rep.pr[0]:>9.4f}{rep.rc[0]:>9.4f}{rep.n_users:>7}")
    (run.out / "eval.csv").write_text(_format_csv(ev.CSV_COLUMNS, [r.csv_row() for r in reports]),
                                      encoding="utf-8")
    return 0


def oracle_states(run: Run) -> list[sim.State]:
    o, e = run.cfg.oracle, run.cfg.eval
    pool = run.split.test if o.users == "test" else range(run.dataset.num_users)
    users, _ = ev.eligible(run.histories(pool), e.warmup)
    users = users[:o.max_users] if o.max_users > 0 else users
    if not users:
        raise DataError("no eligible users for the beam-search diagnostic")
    return [run.env.reset(h.user, h.items[:e.warmup], h.ratings[:e.warmup]) for h in users]


def cmd_validate(run: Run) -> int:
    o, e = run.cfg.oracle, run.cfg.eval
    report = orc.relative_performance(run.env, oracle_states(run), e.horizon, o.k_ref,
                                      o.beam_sizes, e.mask_seen, run.workers)
    paths = [run.dataset_path] + ([run.sim_path] if run.cfg.simulator.kind == "mf" else [])
    report.extra = run.envelope("validate", {"seed": run.cfg.data.split_seed}, *paths)
    run.write_json("oracle.json", report.to_dict())
    for k in report.beam_sizes:
        print(f"beam k={k:<3} RW@{e.horizon} = {report.mean_reward(k) / e.horizon:.4f}")
    print(f"relative performance (greedy / beam@{o.k_ref}) = {report.relative:.4f}")
    print(f"verdict: {report.verdict}")
    return 0


def cmd_sweep_gamma(run: Run) -> int:
    e, sw = run.cfg.eval, run.cfg.sweep
    results = ev.gamma_sweep(run.agent, run.env, sw.gammas, run.histories(run.split.test),
                             e.horizon, e.seeds, e.warmup, run.workers, log=_log)
    rows = [[g, rep.rw[0], rep.rw[1]] for g, rep in results]
    (run.out / "sweep_gamma.csv").write_text(_format_csv(ev.SWEEP_COLUMNS, rows), encoding="utf-8")
    paths = [run.dataset_path] + ([run.sim_path] if run.cfg.simulator.kind == "mf" else [])
    run.write_json("sweep_gamma.json", run.envelope("sweep-gamma", {
        "results": [dict(rep.to_dict(), gamma=g) for g, rep in results]}, *paths))
    if sw.plot:
        svg = line_chart_svg([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
                             title=f"RW@{e.horizon} vs discount factor", xlabel="gamma",
                             ylabel=f"RW@{e.horizon}")
        (run.out / "sweep_gamma.svg").write_text(svg, encoding="utf-8")
    for g, m, s in rows:
        print(f"gamma={g:<5g} RW@{e.horizon}={m:.4f} ± {s:.4f}")
    return 0


# -- argument parsing ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    def flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommand copies must not overwrite values given before the subcommand
        def default(v):
            return argparse.SUPPRESS if suppress else v

        p = _Parser(add_help=False)
        p.add_argument("--config", default=default(None), help="experiment config (INI)")
        p.add_argument("--seed", type=int, default=default(None),
                       help="override every seed in the config")
        p.add_argument("--workers", type=int, default=default(1), help="evaluation worker threads")
        p.add_argument("--out", default=default("runs"), help="output directory")
        return p

    common = flags(suppress=True)
    parser = _Parser(prog="irsval", description=__doc__.splitlines()[0], parents=[flags(False)])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="parse, k-core filter, densify, write dataset")
    p.add_argument("--raw", help="raw rating file (overrides [data] path)")
    p.add_argument("--format", help="doublecolon | csv | tsv")
    p.add_argument("--k-core", type=int, default=None)
    p.set_defaults(func=cmd_ingest)

    for name, func, text in (
        ("train-sim", cmd_train_sim, "fit the matrix-factorization simulator"),
        ("eval-sim", cmd_eval_sim, "held-out RMSE of the simulator"),
        ("evaluate", cmd_evaluate, "interactive evaluation of the configured policies"),
        ("validate", cmd_validate, "greedy vs beam-search long-term-effect diagnostic"),
        ("sweep-gamma", cmd_sweep_gamma, "RW@T as a function of the discount factor"),
    ):
        sub.add_parser(name, parents=[common], help=text).set_defaults(func=func)

    p = sub.add_parser("train-agent", parents=[common], help="train a Q-learning recommender")
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_train_agent)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(Run(args))
    except IRSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
