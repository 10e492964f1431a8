//! Fits and corrects an unbalanced Poisson panel: cells are missing at
//! random and some units are all zero, so they carry no information and
//! are removed before fitting.
//!
//! `cargo run --release --example unbalanced_panel`

use fepanel::correction::{correct, CorrectionOptions, Method, SubpanelPolicy};
use fepanel::family::Family;
use fepanel::panel::{Observation, PanelData};
use fepanel::validate::{validate, ValidateOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

fn main() -> fepanel::Result<()> {
    let (n, t, beta) = (200, 12, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let alpha: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng) - 1.0).collect();
    let gamma: Vec<f64> = (0..t).map(|_| 0.3 * normal.sample(&mut rng)).collect();
    let mut obs = Vec::new();
    for (i, a) in alpha.iter().enumerate() {
        for (s, g) in gamma.iter().enumerate() {
            if rng.gen::<f64>() < 0.25 {
                continue;
            }
            let x = normal.sample(&mut rng);
            let mean = (beta * x + a + g).exp();
            let y = Poisson::new(mean).unwrap().sample(&mut rng);
            obs.push(Observation { unit: i, period: s, y, x: vec![x] });
        }
    }
    let data = PanelData::new(n, t, obs, vec!["x".into()])?;
    let index = data.index();
    println!("{} observations, T̄ = {:.2}, N̄ = {:.2}", data.n_obs(), index.tbar(), index.nbar());

    let report = validate(&data, &Family::Poisson, &ValidateOptions::default());
    println!("units without variation: {}", report.no_variation_units.len());
    let keep: Vec<bool> = (0..n).map(|i| !report.drop_units.contains(&i)).collect();
    let clean = data.restrict(&keep, &vec![true; t])?.data;

    // Leaving out a period can leave a sparse unit with only zeros.
    let opts = CorrectionOptions {
        policy: SubpanelPolicy::DropNonVarying,
        ..Default::default()
    };
    for method in [Method::Fe, Method::Abc { trim: 0, iterations: 1 }, Method::Jbc] {
        let est = correct(&clean, &Family::Poisson, &method, &opts)?;
        println!("{:>4} {:.4} (se {:.4})", est.method.label(), est.beta[0], est.se[0]);
    }
    println!("truth {beta}");
    Ok(())
}
