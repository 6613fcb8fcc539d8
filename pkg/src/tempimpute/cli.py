"""Command-line interface: ``tempimpute <subcommand> [options]``.

Exit codes: 0 ok, 1 usage, 2 parse/validation, 3 numerical failure,
4 unconverged (sampler, or hyperparameter optimisation for ``fit``).
"""
from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import io
from .config import ConfigError, RunConfig, validate_document
from .diagnostics import (concordance, empirical_variogram, error_metrics, infer_measurement_hour,
                          summary_stats)
from .experiments import QUANTILE_LEVELS, boundary_masses, run_toy
from .geom_time import project_lonlat
from .gp_core import FittedGP, fit_hyperparameters, predict_windows
from .kernels import model_variogram, strip_station_mean
from .linalg import NumericalError
from .smoothhmc import ImputationDraws, impute_station
from .synthetic import IOWA_LONLAT, simulate
from . import toy_oracle

logger = logging.getLogger("tempimpute")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC, EXIT_UNCONVERGED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out_dir is not None:
        kw["out_dir"] = args.out_dir
    if args.threads is not None:
        kw["threads"] = args.threads
    return cfg.replace(**kw) if kw else cfg


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_model(path) -> FittedGP:
    doc = io.read_json(path)
    validate_document(doc, "fitted_gp")
    try:
        return FittedGP.from_dict(doc)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"{path}: invalid model: {e}") from None


def _hourly_grid(records: io.StationRecords) -> np.ndarray:
    t = np.concatenate([s[0] for s in records.series.values()])
    return np.arange(np.ceil(t.min()), np.floor(t.max()) + 0.5, 1.0)


def _pick_station(extrema, station):
    ids = sorted({r.station_id for r in extrema})
    if station is None:
        if len(ids) != 1:
            raise UsageError(f"extrema file holds stations {ids}; choose one with --station")
        return ids[0]
    if station not in ids:
        raise UsageError(f"station {station!r} not in extrema file ({ids})")
    return station


def _target(records, extrema, station, lon=None, lat=None):
    """Target id and projected location; coordinates from flags or the extrema file."""
    rows = [r for r in extrema if r.station_id == station] if extrema else []
    if lon is None or lat is None:
        have = [(r.lon, r.lat) for r in rows if r.lon is not None and r.lat is not None]
        if not have:
            raise UsageError(f"no coordinates for {station}: add lon_deg/lat_deg columns or "
                             "pass --target-lon/--target-lat")
        lon, lat = have[0]
    ref = io.reference_point(v for s, v in records.lonlat.items() if s != station)
    return project_lonlat(lon, lat, *ref, station), ref


def _nearby(records, exclude, ref):
    ds = records.dataset(ref, exclude=[exclude] if exclude else ())
    if len(ds.station_ids) < 1:
        raise UsageError("no nearby stations left after excluding the target")
    return ds


def _meas_hour(extrema_rows, override):
    if override is not None:
        return override
    hours = {r.meas_hour for r in extrema_rows}
    if len(hours) != 1 or None in hours:
        raise UsageError("measurement hour is unknown or varies; pass --meas-hour "
                         "(or run infer-hour)")
    return hours.pop()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args, cfg: RunConfig) -> int:
    s = cfg.simulate
    lonlat = {k: tuple(v) for k, v in (s.stations or IOWA_LONLAT).items()}
    if s.hidden not in lonlat:
        raise ConfigError(f"simulate.hidden {s.hidden!r} is not among the stations")
    ref = io.reference_point(lonlat.values())
    locs = {k: project_lonlat(lon, lat, *ref, k) for k, (lon, lat) in lonlat.items()}
    syn = simulate(cfg.prior_kernel(), days=s.days, seed=cfg.seed, meas_hour=s.meas_hour, locations=locs,
                   hidden=s.hidden, noise_var=cfg.prior_noise_var(), base_temp=s.base_temp,
                   offset_sd=s.offset_sd, diurnal_amplitude=s.diurnal_amplitude, peak_hour=s.peak_hour)
    frame = io.TimeFrame(dt.date.fromisoformat(s.start_date), dt.timedelta(hours=s.utc_offset_hours))
    for sid, v in syn.observed.items():
        if v.min() < io.TEMP_RANGE[0] or v.max() > io.TEMP_RANGE[1]:
            raise ConfigError(f"simulated temperatures for {sid} leave {io.TEMP_RANGE}; adjust base_temp")
    out = _out(cfg)
    near = {k: (syn.times, syn.observed[k]) for k in syn.observed if k != s.hidden}
    io.write_station_file(out / "stations.csv", frame, lonlat, near)
    io.write_station_file(out / "hidden_truth.csv", frame, lonlat, {s.hidden: (syn.times, syn.hidden_truth())})
    lon, lat = lonlat[s.hidden]
    recs = [io.ExtremaRecord(s.hidden, frame.epoch_date + dt.timedelta(days=e.day_index), e.tn, e.tx,
                             s.meas_hour, lon, lat) for e in syn.extrema()]
    io.write_extrema_file(out / "extrema.csv", recs)
    io.write_json(out / "truth_model.json", FittedGP(syn.kernel, syn.noise_var).to_dict())
    logger.info("wrote %d nearby stations, %d extrema days to %s", len(near), len(recs), out)
    return EXIT_OK


def cmd_fit(args, cfg: RunConfig) -> int:
    rec = io.read_station_file(args.stations)
    exclude = set(args.exclude or ())
    ds = rec.dataset(exclude=exclude)
    if len(ds.station_ids) < 2:
        raise UsageError("fitting needs at least 2 stations")
    init = dict(cfg.hyper_overrides)
    if cfg.noise_var is not None:
        init["noise.variance"] = cfg.noise_var
    f = cfg.fit
    fit = fit_hyperparameters(cfg.prior_kernel(), ds, chunk_days=cfg.chunk_days, init=init or None,
                              max_iters=f.max_iters, tol=f.tol, n_starts=f.n_starts, seed=cfg.seed,
                              threads=cfg.threads, max_chunk_points=f.max_chunk_points)
    out = _out(cfg)
    io.write_json(out / "model.json", fit.to_dict())
    report = {"stations": ds.station_ids, "n_obs": len(ds), "log_likelihood": fit.log_likelihood,
              "iterations": fit.iterations, "n_chunks": fit.n_chunks, "converged": fit.converged,
              "message": fit.message, "noise_var": fit.noise_var,
              "hyper": dict(zip(fit.kernel.hyper_names(), fit.kernel.hyper_values().tolist())),
              "history": list(fit.history)}
    io.write_json(out / "fit_report.json", report)
    return EXIT_OK if fit.converged else EXIT_UNCONVERGED


def cmd_predict(args, cfg: RunConfig) -> int:
    rec = io.read_station_file(args.stations)
    fit = _load_model(args.model)
    extrema = io.read_extrema_file(args.extrema) if args.extrema else []
    station = args.station or (_pick_station(extrema, None) if extrema else "target")
    loc, ref = _target(rec, extrema, station, args.target_lon, args.target_lat)
    grid = _hourly_grid(rec)
    pred = predict_windows(fit, _nearby(rec, station, ref), loc, grid, cfg.predict_window_days,
                           cfg.predict_overlap_days, include_noise=cfg.include_noise, threads=cfg.threads)
    mean, sd = pred.mean, np.sqrt(pred.var)
    out = _out(cfg)
    io.write_table(out / "prediction.csv", ["timestamp", "mean", "sd"],
                   ([rec.frame.timestamp(t), m, s] for t, m, s in zip(grid, mean, sd)))
    q = np.array([mean + stats.norm.ppf(l) * sd for l in io.ENVELOPE_LEVELS])
    io.write_envelope(out / "envelope.csv", rec.frame, grid, q)
    return EXIT_OK


def cmd_impute(args, cfg: RunConfig) -> int:
    rec = io.read_station_file(args.stations)
    fit = _load_model(args.model)
    extrema = io.read_extrema_file(args.extrema)
    station = _pick_station(extrema, args.station)
    rows = [r for r in extrema if r.station_id == station]
    hour = _meas_hour(rows, args.meas_hour)
    loc, ref = _target(rec, extrema, station, args.target_lon, args.target_lat)
    grid = _hourly_grid(rec)
    draws = impute_station(fit, _nearby(rec, station, ref), loc,
                           io.extrema_for_station(extrema, station, rec.frame), hour, grid,
                           cfg.impute_window_days, cfg.impute_overlap_days, cfg.sampler_config(),
                           include_noise=cfg.include_noise)
    out = _out(cfg)
    io.write_draws(out / "draws.csv", rec.frame, grid, draws.samples, draws.mu_miss_samples)
    io.write_envelope(out / "envelope.csv", rec.frame, grid, draws.quantiles(io.ENVELOPE_LEVELS))
    io.write_json(out / "impute_diagnostics.json",
                  {"station": station, "meas_hour": hour, "converged": draws.converged,
                   "n_draws": draws.samples.shape[0], "chains": draws.n_chains, "windows": draws.diagnostics})
    if not draws.converged:
        logger.error("sampler flagged unconverged windows; see impute_diagnostics.json")
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_diagnose(args, cfg: RunConfig) -> int:
    rec = io.read_station_file(args.stations)
    fit = _load_model(args.model)
    truth_rec = io.read_station_file(args.truth, frame=rec.frame)
    if len(truth_rec.series) != 1:
        raise UsageError("truth file must hold exactly one station")
    (station, (t_truth, v_truth)), = truth_rec.series.items()
    lon, lat = truth_rec.lonlat[station]
    loc, ref = _target(rec, [], station, lon, lat)
    grid = _hourly_grid(rec)
    pos = {t: i for i, t in enumerate(grid)}
    sel = np.array([t in pos for t in t_truth])
    if not sel.any():
        raise UsageError("truth timestamps do not overlap the station grid")
    idx = np.array([pos[t] for t in t_truth[sel]])
    if not np.array_equal(idx, np.arange(len(grid))):
        raise UsageError("truth file must cover every hour of the station grid")
    truth = v_truth[sel]
    pred = predict_windows(fit, _nearby(rec, station, ref), loc, grid, cfg.predict_window_days,
                           cfg.predict_overlap_days, include_noise=cfg.include_noise, threads=cfg.threads)
    report = {"station": station, "unconstrained": error_metrics(truth, pred, seed=cfg.seed).as_dict()}
    truth_stats = summary_stats(truth, grid, cfg.infer_hour.hours)
    names = ("avg_tx", "avg_tn", "avg_abs_dtx", "avg_abs_dtn")
    header = ["hour", "statistic", "truth"]
    imputed = None
    if args.draws:
        d_grid, samples, _ = io.read_draws(args.draws, rec.frame)
        if not np.allclose(d_grid, grid):
            raise UsageError("draw file grid does not match the station grid")
        draws = ImputationDraws(samples, np.zeros((len(samples), 1)), 1)
        report["constrained"] = error_metrics(truth, draws).as_dict()
        report["concordance"] = concordance(pred, samples.mean(axis=0))
        imputed = summary_stats(samples, grid, cfg.infer_hour.hours)
        header += ["imputed_mean", "imputed_sd", "covered_2sd"]
    rows, covered = [], []
    for n, name in enumerate(names):
        tv = getattr(truth_stats, name)
        for j, h in enumerate(truth_stats.hours):
            row = [int(h), name, float(tv[j])]
            if imputed is not None:
                m, s = getattr(imputed.mean(), name)[j], getattr(imputed.sd(), name)[j]
                ok = bool(abs(tv[j] - m) <= 2 * s)
                covered.append(ok)
                row += [float(m), float(s), int(ok)]
            rows.append(row)
    out = _out(cfg)
    io.write_table(out / "summary_stats.csv", header, rows)
    if imputed is not None:
        report["summary_coverage"] = float(np.mean(covered))
    io.write_json(out / "error_report.json", report)
    return EXIT_OK


def cmd_variogram(args, cfg: RunConfig) -> int:
    rec = io.read_station_file(args.stations)
    ds = rec.dataset()
    ids = ds.station_ids
    v = cfg.variogram
    ests = [empirical_variogram(ds, (a, b), v.lag_bin_hours, v.max_lag_hours)
            for i, a in enumerate(ids) for b in ids[i:]]
    out = _out(cfg)
    io.write_table(out / "variogram.csv", ["pair", "h_km", "r_hr", "gamma", "n_pairs"],
                   (row for e in ests for row in e.rows()))
    if args.model:
        fit = _load_model(args.model)
        k = strip_station_mean(fit.kernel)
        rows = []
        for e in ests:
            g = model_variogram(k, fit.noise_var, e.distance_km, e.lags)
            pair = f"{e.station_pair[0]}-{e.station_pair[1]}"
            rows += [(pair, e.distance_km, float(r), float(x)) for r, x in zip(e.lags, np.broadcast_to(g, e.lags.shape))]
        io.write_table(out / "variogram_model.csv", ["pair", "h_km", "r_hr", "gamma_model"], rows)
    return EXIT_OK


def cmd_infer_hour(args, cfg: RunConfig) -> int:
    rec = io.read_station_file(args.stations)
    fit = _load_model(args.model)
    extrema = io.read_extrema_file(args.extrema)
    station = _pick_station(extrema, args.station)
    loc, ref = _target(rec, extrema, station, args.target_lon, args.target_lat)
    grid = _hourly_grid(rec)
    scan = infer_measurement_hour(fit, _nearby(rec, station, ref), loc,
                                  io.extrema_for_station(extrema, station, rec.frame), grid,
                                  cfg.sampler_config(), cfg.infer_hour.hours, cfg.impute_window_days,
                                  cfg.impute_overlap_days, cfg.predict_window_days, cfg.predict_overlap_days,
                                  include_noise=cfg.include_noise)
    dist = scan.distance_from_unconstrained()
    out = _out(cfg)
    io.write_table(out / "hour_scan.csv", ["hour", "delta", "distance_from_unconstrained", "converged"],
                   ([int(h), float(d), float(r), int(c)]
                    for h, d, r, c in zip(scan.hours, scan.delta, dist, scan.converged)))
    io.write_json(out / "hour_scan.json",
                  {"station": station, "best_hour": scan.best_hour, "all_converged": bool(scan.converged.all()),
                   "hours": scan.hours, "delta": scan.delta, "converged": scan.converged})
    if not scan.converged.all():
        logger.error("sampler flagged unconverged runs for hours %s", scan.hours[~scan.converged].tolist())
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_toy(args, cfg: RunConfig) -> int:
    t = cfg.toy
    sc = cfg.sampler_config()
    probs, smooth = run_toy(sc, t.p, t.x_min, t.x_max)
    _, hard = run_toy(sc, t.p, t.x_min, t.x_max, hard=True, hard_init=t.hard_init)
    spec = toy_oracle.toy_spec(t.p)
    out = _out(cfg)
    io.write_table(out / "toy_ks.csv", ["coordinate", "ks_smoothhmc", "ks_hard"],
                   ([i + 1, float(a), float(b)] for i, (a, b) in enumerate(zip(smooth.ks, hard.ks))))
    rows = [("oracle",) + r for r in toy_oracle.quantile_table(spec, t.x_min, t.x_max, QUANTILE_LEVELS)]
    for run in (smooth, hard):
        q = np.quantile(run.draws.samples, QUANTILE_LEVELS, axis=0)
        rows += [(run.label, i + 1, lvl, float(q[j, i]))
                 for i in range(t.p) for j, lvl in enumerate(QUANTILE_LEVELS)]
    io.write_table(out / "toy_quantiles.csv", ["source", "coordinate", "level", "value"], rows)
    report = {"p": t.p, "x_min": t.x_min, "x_max": t.x_max, "smoothhmc": smooth.summary(),
              "hard": hard.summary(),
              "satisfaction_ratio": smooth.satisfaction / max(hard.satisfaction, 1e-12)}
    if t.p >= 52:
        report["boundary_masses_23_52"] = {
            "sampled": boundary_masses(smooth.draws, 22, 51),
            "oracle": {"i_is_min": float(probs.row[22]), "j_is_max": float(probs.col[51])}}
    io.write_json(out / "toy_report.json", report)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "impute": cmd_impute,
            "diagnose": cmd_diagnose, "variogram": cmd_variogram, "infer-hour": cmd_infer_hour,
            "toy": cmd_toy}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (see schemas/run_config.schema.json)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out-dir", help="output directory (default from config: out)")
    common.add_argument("--threads", type=int, help="worker threads for fitting and prediction")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="tempimpute", description="Impute hourly temperature from daily extrema.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="synthetic stations, hidden truth and extrema")
    s = sub.add_parser("fit", parents=[common], help="fit GP hyperparameters to hourly stations")
    s.add_argument("--stations", required=True)
    s.add_argument("--exclude", nargs="*", help="station ids to leave out")

    def target_args(s, extrema_required):
        s.add_argument("--stations", required=True)
        s.add_argument("--model", required=True)
        s.add_argument("--extrema", required=extrema_required)
        s.add_argument("--station", help="target station id (default: the only one in the extrema file)")
        s.add_argument("--target-lon", type=float)
        s.add_argument("--target-lat", type=float)

    target_args(sub.add_parser("predict", parents=[common], help="unconstrained GP prediction"), False)
    s = sub.add_parser("impute", parents=[common], help="SmoothHMC imputation from daily extrema")
    target_args(s, True)
    s.add_argument("--meas-hour", type=int, choices=range(24), metavar="0-23")
    target_args(sub.add_parser("infer-hour", parents=[common], help="scan measurement hours by concordance"),
                True)
    s = sub.add_parser("diagnose", parents=[common], help="error metrics and per-hour summary statistics")
    s.add_argument("--stations", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--truth", required=True, help="hourly station file for the target")
    s.add_argument("--draws", help="draw CSV written by impute")
    s = sub.add_parser("variogram", parents=[common], help="empirical (and model) variograms")
    s.add_argument("--stations", required=True)
    s.add_argument("--model")
    sub.add_parser("toy", parents=[common], help="independent-normal toy: oracle vs samplers")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"tempimpute {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (io.ParseError, ConfigError) as e:
        print(f"tempimpute {args.command}: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"tempimpute {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"tempimpute {args.command}: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
