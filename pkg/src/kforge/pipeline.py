"""End-to-end orchestration: simulate, sample, reconstruct, score, export.

Every step keys its randomness off (master seed, sorted video index), so
results are independent of worker scheduling and identical across --jobs
settings. Output files are deterministic byte-for-byte given one config.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .coils import apply_compression, estimate_sensitivities, svd_coil_compress
from .config import config_as_dict, config_hash
from .dataset import (build_fastdvdnet_records, build_unet3d_records,
                      build_varnet_records, make_split, read_record,
                      write_record)
from .errors import MissingInputError, NumericalError, ValidationError
from .metrics import (ProfileSpec, QualityReport, edge_sharpness,
                      friedman_nemenyi, mse, psnr, read_metrics_csv,
                      snr_estimate, ssim, write_metrics_csv)
from .nufft import NufftPlan
from .recon import CsConfig, EncodingOperator, cs_temporal_tv, zero_filled
from .sim import SimConfig, ifft2_centered, simulate_video
from .traj import (CartesianConfig, SpiralConfig, cartesian_mask,
                   radial_trajectory, spiral_trajectory, write_mask,
                   write_trajectory)
from .video import downsample_bilinear, load_frame_sequence

METRIC_DIRECTIONS = {
    # +1 ranks ascending (lower is better), -1 descending
    "mse": 1, "psnr_db": -1, "ssim": -1, "snr_db": -1,
    "es_mean": -1, "es_std_t": 1,
}


def sim_dir(cfg):
    return os.path.join(cfg.out_dir, "sim")


def traj_dir(cfg):
    return os.path.join(cfg.out_dir, "traj")


def recon_dir(cfg):
    return os.path.join(cfg.out_dir, "recon")


def export_dir(cfg):
    return os.path.join(cfg.out_dir, "export")


def figures_dir(cfg):
    return os.path.join(cfg.out_dir, "figures")


def metrics_path(cfg):
    return os.path.join(cfg.out_dir, "metrics.csv")


def stats_path(cfg):
    return os.path.join(cfg.out_dir, "stats.json")


def list_videos(video_dir):
    """Sorted subdirectory names, one video per directory of frames."""
    if not os.path.isdir(video_dir):
        raise MissingInputError(f"video directory not found: {video_dir}")
    vids = sorted(d for d in os.listdir(video_dir)
                  if os.path.isdir(os.path.join(video_dir, d)))
    if not vids:
        raise MissingInputError(f"no video subdirectories in {video_dir}")
    return vids


def video_seed(master_seed, index):
    """Stable per-video seed, independent of worker scheduling."""
    seq = np.random.SeedSequence([int(master_seed), int(index)])
    return int(seq.generate_state(1, np.uint64)[0])


def _parallel_map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _json_safe(value):
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


# ---------------------------------------------------------------- simulate

def _simulate_task(task):
    cfg, vid, index = task
    video = load_frame_sequence(os.path.join(cfg.video_dir, vid),
                                limit=cfg.frames)
    video = downsample_bilinear(video, cfg.image_size, cfg.image_size)
    vseed = video_seed(cfg.seed, index)
    sim_cfg = SimConfig(n_coils=cfg.n_coils, noise_kind=cfg.noise, seed=vseed)
    result = simulate_video(video.frames, sim_cfg)
    arrays = {
        "kspace": result.kspace.astype(np.complex64),
        "maps": result.coil_maps.astype(np.complex64),
        "target": np.abs(result.object_series).astype(np.float32),
    }
    meta = {"video": vid, "video_index": index, "seed": vseed,
            "config_hash": config_hash(cfg)}
    for key, value in result.info.items():
        meta[f"sim_{key}"] = _json_safe(value)
    path = os.path.join(sim_dir(cfg), f"{vid}.kfrg")
    write_record(path, "fullksp", arrays, meta)
    return vid


def run_simulate(cfg):
    """Simulate k-space for every video; returns the video id list."""
    vids = list_videos(cfg.video_dir)
    os.makedirs(sim_dir(cfg), exist_ok=True)
    tasks = [(cfg, vid, i) for i, vid in enumerate(vids)]
    _parallel_map(_simulate_task, tasks, cfg.jobs)
    manifest = {"config_hash": config_hash(cfg), "videos": vids}
    with open(os.path.join(sim_dir(cfg), "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return vids


def _sim_videos(cfg):
    d = sim_dir(cfg)
    if not os.path.isdir(d):
        raise MissingInputError(f"no simulation output at {d}; "
                                "run the simulate step first")
    vids = sorted(os.path.splitext(f)[0] for f in os.listdir(d)
                  if f.endswith(".kfrg"))
    if not vids:
        raise MissingInputError(f"no .kfrg files in {d}")
    return vids


# ------------------------------------------------------------ trajectories

def _cartesian_cfg(cfg):
    return CartesianConfig(n_center=cfg.cart_center_lines,
                           n_random=cfg.cart_random_lines,
                           band_fraction=cfg.cart_band_fraction,
                           norepeat_window=cfg.cart_window)


def _spiral_cfg(cfg):
    return SpiralConfig(arms=cfg.spiral_arms,
                        samples_per_arm=cfg.spiral_samples,
                        r_inner=cfg.spiral_r_inner,
                        r_outer=cfg.spiral_r_outer,
                        accel_inner=cfg.spiral_accel_inner,
                        accel_outer=cfg.spiral_accel_outer,
                        frame_period=cfg.spiral_period,
                        nominal_matrix=cfg.spiral_matrix,
                        dcf_grid=cfg.spiral_dcf_grid)


def _mask_for_video(cfg, vseed, n_frames):
    rng = np.random.default_rng(np.random.SeedSequence([vseed, 0x6D61736B]))
    return cartesian_mask(n_frames, cfg.image_size, _cartesian_cfg(cfg), rng)


def run_traj(cfg):
    """Write reference trajectory/mask files and return a summary dict."""
    os.makedirs(traj_dir(cfg), exist_ok=True)
    T = cfg.frames
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x74726A]))
    mask = cartesian_mask(T, cfg.image_size, _cartesian_cfg(cfg), rng)
    write_mask(mask, os.path.join(traj_dir(cfg), "cartesian.kmsk"))
    radial = radial_trajectory(T, spokes=cfg.radial_spokes,
                               samples=cfg.radial_samples,
                               angle_increment=cfg.radial_angle)
    write_trajectory(radial, os.path.join(traj_dir(cfg), "radial.ktrj"))
    spiral = spiral_trajectory(T, _spiral_cfg(cfg))
    write_trajectory(spiral, os.path.join(traj_dir(cfg), "spiral.ktrj"))
    return {
        "frames": T,
        "cartesian_lines_per_frame": int(mask.mask[0].sum()),
        "radial_spokes": cfg.radial_spokes,
        "radial_samples_per_spoke": cfg.radial_samples,
        "spiral_arms": cfg.spiral_arms,
        "spiral_samples_per_arm": cfg.spiral_samples,
    }


# ------------------------------------------------------------------ recon

def _noncart_trajectory(cfg, scheme, n_frames):
    if scheme == "radial":
        return radial_trajectory(n_frames, spokes=cfg.radial_spokes,
                                 samples=cfg.radial_samples,
                                 angle_increment=cfg.radial_angle)
    return spiral_trajectory(n_frames, _spiral_cfg(cfg))


def _noncart_samples(tr, ksp):
    """Resample Cartesian k-space onto a trajectory, frame by frame."""
    coil_imgs = ifft2_centered(ksp)
    shape = ksp.shape[-2:]
    plans = {}
    out = np.empty(ksp.shape[:2] + (tr.coords.shape[1],), dtype=np.complex128)
    for t in range(ksp.shape[0]):
        key = tr.coords[t].tobytes()
        plan = plans.get(key)
        if plan is None:
            plan = NufftPlan(shape, tr.coords[t])
            plans[key] = plan
        out[t] = plan.forward(coil_imgs[t])
    return out


def _derive_rois(truth):
    """Signal/noise ROIs and an edge profile, shared across methods."""
    mean = truth.mean(axis=0)
    h, w = mean.shape
    signal = mean >= 0.5 * mean.max()
    if signal.sum() < 16:
        cut = np.partition(mean.ravel(), -16)[-16]
        signal = mean >= cut
    block = 6
    corners = [(slice(0, block), slice(0, block)),
               (slice(0, block), slice(w - block, w)),
               (slice(h - block, h), slice(0, block)),
               (slice(h - block, h), slice(w - block, w))]
    noise = None
    noise_level = np.inf
    for rows, cols in corners:
        cand = np.zeros_like(signal)
        cand[rows, cols] = True
        cand &= ~signal
        if cand.sum() >= 16 and float(mean[cand].mean()) < noise_level:
            noise = cand
            noise_level = float(mean[cand].mean())
    if noise is None:
        order = np.argsort(mean, axis=None)
        noise = np.zeros(mean.size, dtype=bool)
        picked = 0
        for flat in order:
            if not signal.flat[flat]:
                noise[flat] = True
                picked += 1
                if picked == 16:
                    break
        noise = noise.reshape(mean.shape)
    grad = np.abs(np.diff(mean, axis=1))
    row, col = np.unravel_index(np.argmax(grad), grad.shape)
    x0 = max(0, col - 8)
    x1 = min(w - 1, col + 9)
    profile = ProfileSpec(start=(int(row), int(x0)), end=(int(row), int(x1)))
    return signal, noise, profile


def _quality_row(vid, scheme, method, image, truth):
    signal, noise, profile = _derive_rois(truth)
    es = edge_sharpness(image, profile)
    return QualityReport(
        dataset=vid,
        method=f"{method}-{scheme}",
        mse=mse(image, truth),
        psnr_db=psnr(image, truth),
        ssim=ssim(image, truth),
        snr_db=snr_estimate(image, signal, noise),
        es_mean=es.es_mean,
        es_std_t=es.es_std_t,
    )


def _recon_task(task):
    cfg, vid, scheme, method = task
    record = read_record(os.path.join(sim_dir(cfg), f"{vid}.kfrg"))
    ksp = record.arrays["kspace"]
    truth = record.arrays["target"]
    n_frames = ksp.shape[0]
    image_shape = ksp.shape[-2:]
    vseed = int(record.meta["seed"])

    mask = None
    tr = None
    if scheme == "cartesian":
        mask = _mask_for_video(cfg, vseed, n_frames)
        data = ksp * mask.mask[:, None, :, None]
    elif scheme == "full":
        data = np.asarray(ksp, dtype=np.complex128)
    else:
        tr = _noncart_trajectory(cfg, scheme, n_frames)
        data = _noncart_samples(tr, ksp)

    if method == "zf":
        if scheme in ("cartesian", "full"):
            image = zero_filled(data, combine="rss")
        else:
            image = zero_filled(data, traj=tr, image_shape=image_shape,
                                combine="rss")
    else:
        # the simulation's own maps: a calibration-prescan assumption, so
        # the solver is judged on undersampling alone
        maps = record.arrays["maps"]
        if scheme == "full":
            op_mask = np.ones((n_frames,) + (image_shape[0],), dtype=bool)
            op = EncodingOperator(image_shape, mask=op_mask, maps=maps)
        elif scheme == "cartesian":
            op = EncodingOperator(image_shape, mask=mask, maps=maps)
        else:
            op = EncodingOperator(image_shape, traj=tr, maps=maps)
        cs_cfg = CsConfig(lambda_tv=cfg.lambda_tv,
                          iterations=cfg.cs_iterations,
                          cg_iterations=cfg.cs_cg_iterations)
        result = cs_temporal_tv(data, op, cs_cfg)
        image = result.image

    out_dir = os.path.join(recon_dir(cfg), scheme, method)
    os.makedirs(out_dir, exist_ok=True)
    meta = {"video": vid, "scheme": scheme, "method": method,
            "config_hash": config_hash(cfg)}
    write_record(os.path.join(out_dir, f"{vid}.kfrg"), "imageseries",
                 {"image": image.astype(np.float32)}, meta)
    if cfg.emit_figures:
        _emit_figures(cfg, f"{scheme}-{method}-{vid}", image)
    return _quality_row(vid, scheme, method, image.astype(np.float64), truth)


def _upsert_metrics(path, rows):
    """Replace rows for recomputed (dataset, method) pairs, keep the rest."""
    existing = {}
    if os.path.exists(path) and os.path.getsize(path) > 0:
        for row in read_metrics_csv(path):
            existing[(row.dataset, row.method)] = row
    for row in rows:
        existing[(row.dataset, row.method)] = row
    ordered = [existing[key] for key in sorted(existing)]
    write_metrics_csv(path, ordered)


def run_recon(cfg, schemes=None, methods=None):
    """Reconstruct every simulated video for the given schemes/methods."""
    if schemes is None:
        schemes = list(cfg.samplings)
    if methods is None:
        methods = [cfg.method]
    for scheme in schemes:
        if scheme not in ("cartesian", "radial", "spiral", "full"):
            raise ValidationError(f"unknown sampling scheme {scheme!r}")
    for method in methods:
        if method not in ("zf", "cs"):
            raise ValidationError(f"unknown recon method {method!r}")
    vids = _sim_videos(cfg)
    tasks = [(cfg, vid, scheme, method)
             for vid in vids for scheme in schemes for method in methods]
    rows = _parallel_map(_recon_task, tasks, cfg.jobs)
    os.makedirs(cfg.out_dir, exist_ok=True)
    _upsert_metrics(metrics_path(cfg), rows)
    return rows


# --------------------------------------------------------------- evaluate

def run_evaluate(cfg):
    """Rank-statistics summary over the metrics CSV, one block per metric."""
    path = metrics_path(cfg)
    if not os.path.exists(path):
        raise MissingInputError(f"metrics CSV not found: {path}; "
                                "run the recon step first")
    rows = read_metrics_csv(path)
    if not rows:
        raise ValidationError(f"metrics CSV {path} has no rows")
    methods = sorted({r.method for r in rows})
    datasets = sorted({r.dataset for r in rows})
    by_key = {(r.dataset, r.method): r for r in rows}
    paired = [d for d in datasets
              if all((d, m) in by_key for m in methods)]
    stats = {"methods": methods, "datasets": paired, "metrics": {}}
    for metric, direction in METRIC_DIRECTIONS.items():
        block = {"note": None}
        if len(methods) < 3:
            block["note"] = "needs at least 3 methods for rank statistics"
        elif len(paired) < 2:
            block["note"] = "needs at least 2 fully paired datasets"
        else:
            table = np.array([[direction * getattr(by_key[(d, m)], metric)
                               for m in methods] for d in paired])
            table = np.where(np.isfinite(table), table,
                             np.sign(table) * 1e300)
            result = friedman_nemenyi(table)
            block = {
                "note": None,
                "statistic": result.statistic,
                "p_value": result.p_value,
                "mean_ranks": [float(v) for v in result.mean_ranks],
                "nemenyi_p": [[float(v) for v in row]
                              for row in result.nemenyi_p],
            }
        stats["metrics"][metric] = block
    with open(stats_path(cfg), "w") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return stats


# ----------------------------------------------------------------- export

def _export_task(task):
    cfg, vid, index = task
    record = read_record(os.path.join(sim_dir(cfg), f"{vid}.kfrg"))
    ksp = np.asarray(record.arrays["kspace"], dtype=np.complex128)
    truth = np.asarray(record.arrays["target"], dtype=np.float64)
    n_frames = ksp.shape[0]
    image_shape = ksp.shape[-2:]
    vseed = int(record.meta["seed"])

    if 0 < cfg.n_virtual_coils < ksp.shape[1]:
        cm = svd_coil_compress(ksp, cfg.n_virtual_coils, coil_axis=1,
                               seed=vseed)
        ksp = apply_compression(ksp, cm, coil_axis=1)

    entries = []

    def _write(arch, records):
        base = os.path.join(export_dir(cfg), arch)
        os.makedirs(base, exist_ok=True)
        for arrays, extra in records:
            meta = {"video": vid, "arch": arch,
                    "config_hash": config_hash(cfg), "seed": vseed}
            meta.update(extra)
            name = f"{vid}-w{extra['window_start']:03d}.kfrg"
            write_record(os.path.join(base, name), arch, arrays, meta)
            entries.append({"path": f"{arch}/{name}", "video": vid,
                            "arch": arch,
                            "window_start": extra["window_start"]})

    if "varnet" in cfg.export_archs:
        mask = _mask_for_video(cfg, vseed, n_frames)
        masked = ksp * mask.mask[:, None, :, None]
        maps, all_zero = estimate_sensitivities(masked, mask=mask.mask)
        if all_zero:
            raise NumericalError(f"{vid}: sensitivity estimate is all zero")
        zf_init = zero_filled(masked, maps=maps, combine="complex")
        _write("varnet", build_varnet_records(
            masked, mask.mask, maps, zf_init, truth,
            window=cfg.window_varnet))

    if "unet3d" in cfg.export_archs:
        tr = _noncart_trajectory(cfg, "radial", n_frames)
        samples = _noncart_samples(tr, ksp)
        coil_images = zero_filled(samples, traj=tr, image_shape=image_shape,
                                  combine="none")
        _write("unet3d", build_unet3d_records(
            coil_images, truth, window=cfg.window_unet3d))

    if "fastdvdnet" in cfg.export_archs:
        tr = _noncart_trajectory(cfg, "spiral", n_frames)
        samples = _noncart_samples(tr, ksp)
        frames = zero_filled(samples, traj=tr, image_shape=image_shape,
                             combine="rss")
        _write("fastdvdnet", build_fastdvdnet_records(
            frames, truth, window=cfg.window_fastdvdnet))

    return entries


def run_export(cfg):
    """Build training records for each architecture plus a split manifest."""
    vids = _sim_videos(cfg)
    split = make_split(vids, cfg.split_fractions, seed=cfg.seed)
    membership = {}
    for name in ("train", "val", "test"):
        for vid in getattr(split, name):
            membership[vid] = name
    tasks = [(cfg, vid, i) for i, vid in enumerate(vids)]
    all_entries = _parallel_map(_export_task, tasks, cfg.jobs)
    records = []
    for entries in all_entries:
        for entry in entries:
            entry = dict(entry)
            entry["split"] = membership[entry["video"]]
            records.append(entry)
    records.sort(key=lambda e: (e["arch"], e["video"], e["window_start"]))
    manifest = {
        "config_hash": config_hash(cfg),
        "config": config_as_dict(cfg),
        "split": split.as_dict(),
        "records": records,
    }
    os.makedirs(export_dir(cfg), exist_ok=True)
    with open(os.path.join(export_dir(cfg), "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------- figures

def _save_png(path, arr):
    from PIL import Image
    arr = np.asarray(arr, dtype=np.float64)
    top = arr.max()
    scaled = np.zeros_like(arr) if top <= 0 else np.clip(arr / top, 0, 1)
    Image.fromarray((scaled * 255).astype(np.uint8), mode="L").save(path)


def _emit_figures(cfg, tag, image):
    """Frame strip (first/middle/last) and a y-t profile per recon."""
    os.makedirs(figures_dir(cfg), exist_ok=True)
    n_frames, h, w = image.shape
    picks = sorted({0, n_frames // 2, n_frames - 1})
    gap = np.zeros((h, 2))
    strip = []
    for i, t in enumerate(picks):
        if i:
            strip.append(gap)
        strip.append(image[t])
    _save_png(os.path.join(figures_dir(cfg), f"{tag}-frames.png"),
              np.hstack(strip))
    # time along x, the image's center column along y
    _save_png(os.path.join(figures_dir(cfg), f"{tag}-yt.png"),
              image[:, :, w // 2].T)


# -------------------------------------------------------------------- all

def run_all(cfg):
    """Full pipeline: simulate, trajectories, both recons, stats, export."""
    vids = run_simulate(cfg)
    run_traj(cfg)
    run_recon(cfg, schemes=list(cfg.samplings), methods=["zf", "cs"])
    stats = run_evaluate(cfg)
    manifest = run_export(cfg)
    return {"videos": vids, "stats": stats,
            "n_export_records": len(manifest["records"])}
