use super::config::TrainConfig;

/// Gumbel temperature: geometric decay from `lambda0` to `lambda_min` within
/// every commit window, restarting at each window.
pub fn anneal_temperature(epoch: usize, cfg: &TrainConfig) -> f64 {
    let (l0, lmin) = (cfg.lambda0, cfg.lambda_min);
    if cfg.commit <= 1 {
        return lmin;
    }
    let k = (epoch % cfg.commit) as f64 / (cfg.commit - 1) as f64;
    (l0 * (lmin / l0).powf(k)).max(lmin)
}

/// Level supervised in `epoch` (0-based): one level per commit window, the
/// coarsest level for any remaining epochs.
pub fn supervised_level(epoch: usize, cfg: &TrainConfig) -> usize {
    (epoch / cfg.commit).min(cfg.levels)
}

/// First epoch of the window that supervises `level`.
pub fn window_start(level: usize, cfg: &TrainConfig) -> usize {
    level * cfg.commit
}

/// Whether `epoch` is the last one supervising its level, after which that
/// level's parameters are snapshotted and the assignment below it committed.
pub fn closes_window(epoch: usize, cfg: &TrainConfig) -> bool {
    let s = supervised_level(epoch, cfg);
    epoch + 1 == cfg.epochs || supervised_level(epoch + 1, cfg) != s
}

/// Network learning rate of `epoch`.
pub fn learning_rate(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * decay(epoch, cfg)
}

/// Learning rate of the physical base parameters in `epoch`.
pub fn phys_learning_rate(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_phys * decay(epoch, cfg)
}

fn decay(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = if cfg.decay_per_window {
        epoch - window_start(supervised_level(epoch, cfg), cfg)
    } else {
        epoch
    };
    cfg.lr_decay.powi(k as i32)
}
