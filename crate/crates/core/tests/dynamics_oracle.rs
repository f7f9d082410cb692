//! The snake dynamics against an independent Euler–Lagrange derivation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taskprio::model::{Plant, PlantState, SnakeParams};
use taskprio::oracles::LagrangianSnake;

fn oracle_for(p: &SnakeParams) -> LagrangianSnake {
    LagrangianSnake {
        lengths: p.link_lengths.clone(),
        masses: p.link_masses.clone(),
        inertias: p.link_inertias.clone(),
        damping: p.damping.clone(),
        gravity: p.gravity,
        thrusters: p.thrusters.iter().map(|t| (t.link, t.offset, t.angle)).collect(),
    }
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn check(params: SnakeParams, seed: u64) {
    let plant = Plant::snake(params.clone()).unwrap();
    let oracle = oracle_for(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..50 {
        let q = random_vector(&mut rng, plant.dof(), 1.2);
        let v = random_vector(&mut rng, plant.dof(), 1.0);
        let u = random_vector(&mut rng, plant.inputs(), 5.0);
        let state = PlantState::new(q.clone(), v.clone(), 0.0);

        let mass = plant.eval_matrices(&state).mass;
        let mass_gap = (&mass - oracle.mass_matrix(&q)).amax();
        assert!(mass_gap < 1e-7, "mass matrix differs by {mass_gap:e}");

        let ours = plant.forward_dynamics(&state, &u).unwrap();
        let reference = oracle.acceleration(&q, &v, &u);
        let gap = (&ours - &reference).amax() / (1.0 + reference.amax());
        assert!(gap < 1e-5, "accelerations differ by {gap:e}: {ours} vs {reference}");
    }
}

#[test]
fn three_link_snake_matches_the_lagrangian_oracle() {
    check(SnakeParams::three_link(), 11);
}

#[test]
fn heavy_snake_with_uneven_links_matches_the_lagrangian_oracle() {
    let mut params = SnakeParams::three_link();
    params.link_lengths = vec![0.4, 0.7, 0.45];
    params.link_masses = vec![1.5, 3.0, 0.8];
    params.link_inertias = vec![0.05, 0.2, 0.01];
    params.gravity = 0.4;
    check(params, 12);
}

#[test]
fn single_link_snake_matches_the_lagrangian_oracle() {
    let mut params = SnakeParams::three_link();
    params.link_lengths.truncate(1);
    params.link_masses.truncate(1);
    params.link_inertias.truncate(1);
    params.damping.truncate(3);
    params.thrusters.truncate(2);
    check(params, 13);
}
