mod data;
mod net;
mod points;

use std::path::Path;

use celltissue::labels::{read_points_file, CellPoint};
use celltissue::ConstraintMode;

use crate::config::RunConfig;
use crate::{CliError, Command, GeometryArgs, GlobalArgs, ModeArg, NetArgs, Outcome};

pub(crate) fn apply_global(cfg: &mut RunConfig, g: &GlobalArgs) {
    if let Some(root) = &g.root {
        cfg.dataset_root = Some(root.clone());
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.experiment.base_seed = s;
    }
}

fn apply_geometry(cfg: &mut RunConfig, g: &GeometryArgs) {
    let geo = &mut cfg.geometry;
    if let Some(v) = g.mpp {
        geo.mpp_cell = v;
    }
    if let Some(v) = g.cell_side {
        geo.cell_side_px = v;
    }
    if let Some(v) = g.fov_ratio {
        geo.fov_ratio = v;
    }
    if let Some(v) = g.store_downsample {
        geo.tissue_store_downsample = v;
    }
    if let Some(v) = g.c_x {
        geo.c_x = v;
    }
    if let Some(v) = g.c_y {
        geo.c_y = v;
    }
}

fn apply_net(cfg: &mut RunConfig, n: &NetArgs) {
    let t = &mut cfg.experiment.train;
    if let Some(v) = n.n_train {
        cfg.synth.n_samples = v;
    }
    if let Some(v) = n.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = n.ambiguity {
        cfg.synth.ambiguity = v;
    }
    if let Some(v) = n.steps {
        t.steps = v;
    }
    if let Some(v) = n.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = n.lr {
        t.lr_cell = v;
        t.lr_tissue = v;
    }
    if let Some(v) = n.lr_cell {
        t.lr_cell = v;
    }
    if let Some(v) = n.lr_tissue {
        t.lr_tissue = v;
    }
    if let Some(v) = n.dropout {
        cfg.experiment.net.cell.dropout = v;
    }
    if n.detach_injection {
        cfg.experiment.net.detach_injection = true;
    }
    if n.no_augment {
        t.augment = None;
    }
}

pub(crate) fn apply_command(cfg: &mut RunConfig, cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Split { ratios: Some(r), .. } => {
            cfg.split_ratios = [r[0], r[1], r[2]];
        }
        Command::Rasterize {
            radius_um,
            num_classes,
            geometry,
            ..
        } => {
            if let Some(r) = radius_um {
                cfg.label_radius_um = *r;
            }
            if let Some(n) = num_classes {
                cfg.num_classes = *n;
            }
            apply_geometry(cfg, geometry);
        }
        Command::Detect {
            min_distance,
            threshold,
            ..
        } => {
            if let Some(d) = min_distance {
                cfg.detect.min_distance_px = *d;
            }
            if let Some(t) = threshold {
                cfg.detect.threshold = *t;
            }
        }
        Command::Constrain { mode, geometry, .. } => {
            if let Some(m) = mode {
                cfg.constraint_mode = match m {
                    ModeArg::Symmetric => ConstraintMode::Symmetric,
                    ModeArg::DemoteOnly => ConstraintMode::DemoteOnly,
                };
            }
            apply_geometry(cfg, geometry);
        }
        Command::Eval { radius_px, .. } | Command::Consensus { radius_px, .. } => {
            if let Some(r) = radius_px {
                cfg.match_radius_px = *r;
            }
        }
        Command::PairTiger {
            cell_side,
            tissue_side,
            ..
        } => {
            if let Some(c) = cell_side {
                cfg.tiger_cell_side = *c;
            }
            if let Some(t) = tissue_side {
                cfg.tiger_tissue_side = *t;
            }
        }
        Command::Synth { n, ambiguity, .. } => {
            if let Some(n) = n {
                cfg.synth.n_samples = *n;
            }
            if let Some(a) = ambiguity {
                cfg.synth.ambiguity = *a;
            }
        }
        Command::Train { net, .. } => apply_net(cfg, net),
        Command::Experiment { runs, net, .. } => {
            apply_net(cfg, net);
            if let Some(r) = runs {
                cfg.experiment.n_runs = *r;
            }
        }
        Command::Gradcheck {
            tolerance: Some(t), ..
        } => cfg.gradcheck_tolerance = *t,
        _ => {}
    }
    Ok(())
}

pub(crate) fn dispatch(cfg: &RunConfig, cmd: &Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::Validate => data::validate(cfg),
        Command::Split {
            wsi_list,
            assignment_out,
            apply,
            ..
        } => data::split(cfg, wsi_list.as_deref(), assignment_out.as_deref(), *apply),
        Command::Stats { csv_out } => data::stats(cfg, csv_out.as_deref()),
        Command::PairTiger { spec, mode, .. } => data::pair_tiger(cfg, spec, *mode),
        Command::Rasterize { points, png_out, .. } => points::rasterize(cfg, points, png_out.as_deref()),
        Command::Detect { prob, out_dir, .. } => points::detect(cfg, prob, out_dir.as_deref()),
        Command::Constrain {
            dets, mask, csv_out, ..
        } => points::constrain(cfg, dets, mask, csv_out.as_deref()),
        Command::Eval {
            dets, gts, pred_dir, ..
        } => points::eval(cfg, dets, gts, pred_dir.as_deref()),
        Command::Consensus { a, b, csv_out, .. } => points::consensus(cfg, a, b, csv_out.as_deref()),
        Command::Synth { out_dir, .. } => net::synth(cfg, out_dir.as_deref()),
        Command::Train {
            variant, weights_out, ..
        } => net::train(cfg, variant, weights_out.as_deref()),
        Command::Experiment {
            variants,
            all_sharing,
            out_dir,
            ..
        } => net::experiment(cfg, variants, *all_sharing, out_dir.as_deref()),
        Command::Gradcheck {
            variants,
            all_sharing,
            ..
        } => net::gradcheck(cfg, variants, *all_sharing),
    }
}

/// Runs `f` on a pool of `cfg.jobs` threads.
pub(crate) fn with_pool<R: Send>(cfg: &RunConfig, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(CliError::fail)?;
    Ok(pool.install(f))
}

pub(crate) fn read_points(path: &Path) -> Result<Vec<CellPoint>, CliError> {
    read_points_file(path).map_err(|e| CliError::fail(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(CliError::fail)?;
    std::fs::write(path, text).map_err(|e| CliError::fail(format!("{}: {e}", path.display())))
}

pub(crate) fn create_file(path: &Path) -> Result<std::fs::File, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::fail)?;
    }
    std::fs::File::create(path).map_err(|e| CliError::fail(format!("{}: {e}", path.display())))
}
