//! A single hard CLF row on a double integrator must reproduce the pointwise
//! minimum-norm controller.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taskprio::hierarchy::Bounds;
use taskprio::model::PlantState;
use taskprio::oracles::min_norm_oracle;
use taskprio::scenario::Scenario;

const SCENARIO: &str = r#"
name = "planar_double_integrator"

[plant]
kind = "double_integrator"
dim = 2

[initial]
q = [1.0, -0.5]
v = [0.0, 0.0]

[sim]
step = 0.01
duration = 1.0

[[task]]
type = "position"
name = "p"
level = 1
frame = "identity"
target = [0.3, 0.2]
eps = 0.5
weight = 60.0
slack = false
"#;

#[test]
fn hierarchy_matches_the_min_norm_controller_on_random_states() {
    let built = Scenario::parse(SCENARIO).unwrap().build(0).unwrap();
    let bounds = Bounds::unbounded(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut active = 0;
    for _ in 0..100 {
        let q = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let v = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let state = PlantState::new(q, v, 0.0);
        let (u, report) = built
            .hierarchy
            .control_step(&built.plant, &state, &DVector::zeros(2), &bounds)
            .unwrap();
        let clf = &report.clf[0];
        let rhs = -clf.rate * clf.v - clf.l_f;
        let reference = min_norm_oracle(&clf.l_g, rhs).expect("row is satisfiable");
        if rhs < 0.0 {
            active += 1;
        }
        let gap = (&u - &reference).amax();
        assert!(gap <= 1e-6 * (1.0 + reference.amax()), "u {u} vs min-norm {reference}");
    }
    assert!(active > 10, "only {active} states exercised an active row");
}
