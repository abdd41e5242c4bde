//! Nonparametric probe: how much of the DSM target is predictable from
//! (gripper tokens, level)? kNN regression as a mutual-information proxy.
use hgdiffuser::diffusion::*;
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::scenes::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = ObjectSpec::new_cylinder("cyl0", 0.025, 0.12);
    let (cloud, surface) = make_object(&spec, 512, &mut rng).unwrap();
    let gripper = GripperSpec::desk_default();
    let labels = sample_antipodal_grasps(&cloud, &surface, &gripper, 200, 0.5, &mut rng).unwrap().labels;
    let set = TrainingSet {
        scaled_grippers: vec![gripper.scaled(1.0 / cloud.frame.scale)],
        clouds: vec![cloud.clone()],
        samples: labels.iter().map(|l| (0usize, l.pose)).collect(),
    };
    let schedule = NoiseSchedule::default();

    // Build a big bank of draws with features = 18 token coords, per level.
    let n_bank = 40_000usize;
    let idx: Vec<usize> = (0..n_bank).map(|i| i % set.samples.len()).collect();
    let draws = dsm_draws(&set, &idx, &schedule, &mut rng).unwrap();
    let gs = &set.scaled_grippers[0];
    let feats: Vec<[f64; 18]> = draws.iter().map(|d| {
        let pts = hgdiffuser::gripper::gripper_points(&d.perturbed, gs);
        let mut f = [0.0; 18];
        for (i, p) in pts.iter().enumerate() { f[i*3] = p[0]; f[i*3+1] = p[1]; f[i*3+2] = p[2]; }
        f
    }).collect();
    let targets: Vec<[f64; 6]> = draws.iter().map(|d| {
        let t = d.target().to_array();
        let mut u = [0.0; 6];
        for c in 0..6 { u[c] = t[c] * d.sigma; } // u-space target
        u
    }).collect();

    // For a few levels, kNN-regress u from tokens among same-level draws.
    for probe_level in [0usize, 7, 15, 22, 29] {
        let bank: Vec<usize> = (0..n_bank).filter(|&i| draws[i].level == probe_level).collect();
        if bank.len() < 200 { continue; }
        let queries = &bank[..100.min(bank.len())];
        let mut base = 0.0; let mut knn_err = 0.0; let k = 8;
        for &q in queries {
            // distances to all other bank members
            let mut ds: Vec<(f64, usize)> = bank.iter().filter(|&&j| j != q).map(|&j| {
                let mut s = 0.0;
                for c in 0..18 { let d = feats[q][c] - feats[j][c]; s += d * d; }
                (s, j)
            }).collect();
            ds.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut pred = [0.0; 6];
            for &(_, j) in ds.iter().take(k) {
                for c in 0..6 { pred[c] += targets[j][c] / k as f64; }
            }
            for c in 0..6 {
                base += targets[q][c] * targets[q][c];
                let e = targets[q][c] - pred[c];
                knn_err += e * e;
            }
        }
        let nq = queries.len() as f64;
        println!("level {probe_level:2} (sigma {:.3}): E||u||^2 = {:.3}, kNN residual = {:.3}  (bank {})",
            schedule.sigma(probe_level).unwrap(), base / nq, knn_err / nq, bank.len());
    }
}
