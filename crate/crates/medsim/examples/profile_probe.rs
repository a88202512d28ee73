//! Probe: decomposes one coverage replication into fit / estimate phases.

use medsim::glm::{fit_mle, Family, TermSpec};
use medsim::oracle::demo_binary_dgp;
use medsim::sim::{
    estimate_interventional, estimate_natural_pse, CondModel, Mode, ModelBundle, SimDriver,
};

fn main() {
    let dgp = demo_binary_dgp();
    let ds = dgp.sample_dataset(2000, 1);

    let t0 = std::time::Instant::now();
    let mut fits = Vec::new();
    for _ in 0..10 {
        fits.clear();
        fits.push(fit_mle(Family::BernoulliLogit, &TermSpec::saturated(&["v", "d"]), "l", &ds).unwrap());
        fits.push(fit_mle(Family::BernoulliLogit, &TermSpec::saturated(&["v", "d", "l"]), "x", &ds).unwrap());
        fits.push(fit_mle(Family::BernoulliLogit, &TermSpec::saturated(&["v", "d"]), "x", &ds).unwrap());
        fits.push(
            fit_mle(
                Family::OrdinalLogit { levels: 2 },
                &TermSpec::saturated(&["v", "d", "l", "x"]),
                "y",
                &ds,
            )
            .unwrap(),
        );
    }
    println!("4 fits: {:.1} ms (avg of 10)", t0.elapsed().as_secs_f64() * 100.0);

    let schema = ds.schema();
    let natural = ModelBundle::new(
        Mode::NaturalPse,
        schema,
        CondModel::from_glm(fits[0].clone(), schema).unwrap(),
        CondModel::from_glm(fits[1].clone(), schema).unwrap(),
        CondModel::from_glm(fits[3].clone(), schema).unwrap(),
    )
    .unwrap();
    let interventional = ModelBundle::new(
        Mode::Interventional,
        schema,
        CondModel::from_glm(fits[0].clone(), schema).unwrap(),
        CondModel::from_glm(fits[2].clone(), schema).unwrap(),
        CondModel::from_glm(fits[3].clone(), schema).unwrap(),
    )
    .unwrap();

    let t1 = std::time::Instant::now();
    for i in 0..5 {
        let _ = estimate_natural_pse(&natural, &ds, SimDriver::Replicates { j: 200 }, i).unwrap();
        let _ =
            estimate_interventional(&interventional, &ds, SimDriver::Replicates { j: 200 }, i)
                .unwrap();
    }
    println!("7-mean estimate: {:.1} ms (avg of 5)", t1.elapsed().as_secs_f64() * 200.0);
}
