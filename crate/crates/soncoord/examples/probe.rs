use std::time::Instant;
use soncoord::interference::*;

fn main() {
    let t0 = Instant::now();
    // JG spectrum at the symmetric operating point, n_samples=2000
    let layout = hexagonal_layout(12, 0.5).unwrap();
    let scene = Scene::new(layout, RadioParams::default(), 42, 2000).unwrap();
    let p_star = vec![46.0; 12];
    let pv = soncoord::ParamVector::new(p_star.clone()).unwrap();
    let jac = soncoord::estimation::jacobian_fd(
        |p: &soncoord::ParamVector| nalgebra_vec(scene.g_vector(p.as_slice()).unwrap()),
        &pv, &vec![0.5; 12], 1).unwrap();
    let verdict = soncoord::stability::eigen_stability(&jac).unwrap();
    println!("JG margin at P*: {:.5} (stable={})", verdict.margin, verdict.stable);
    println!("eigs re: {:?}", verdict.eigenvalues.iter().map(|e| (e.re*1000.0).round()/1000.0).collect::<Vec<_>>());
    // row sums(JG) ~ 0 in interference-limited regime
    let max_entry = jac.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_row_sum = (0..12).map(|i| jac.row(i).sum().abs()).fold(0.0f64, f64::max);
    println!("max |entry| {max_entry:.4}, max |row sum| {max_row_sum:.4} (ratio {:.3})", max_row_sum/max_entry);
    println!("scene+jacobian: {:?}", t0.elapsed());

    // short horizon trajectories to gauge growth rate
    for coordinated in [false, true] {
        let t1 = Instant::now();
        let cfg = HexagonalConfig { coordinated, t_end: 100.0, step: 0.01, seed: 1, n_samples: 2000, ..Default::default() };
        let run = hexagonal_experiment(&cfg).unwrap();
        // max deviation across time, and when it first exceeded 3 dB
        let mut first_exit = None;
        for (k, p) in run.powers.iter().enumerate() {
            let dev = p.iter().zip(&run.p_star).map(|(a,b)| (a-b).abs()).fold(0.0f64, f64::max);
            if dev > 3.0 && first_exit.is_none() { first_exit = Some(run.times[k]); }
        }
        println!("coordinated={coordinated}: max_dev {:.3} dB, within_ball={}, first_exit={:?}, elapsed {:?}",
                 run.max_deviation_db, run.stayed_within_ball, first_exit, t1.elapsed());
    }
}

fn nalgebra_vec(v: Vec<f64>) -> nalgebra::DVector<f64> { nalgebra::DVector::from_vec(v) }
