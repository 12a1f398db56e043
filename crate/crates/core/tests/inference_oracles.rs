mod common;

use common::{max_abs_diff, random_instance, JointGaussian};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use resonator::basis::{Domain, Point};
use resonator::covariance::Kernel;
use resonator::inference::{
    filter_pass, filter_pass_with, log_likelihood, posterior_at, smooth_pass, ComponentSelector, GaussianBelief,
    ObservationBatch, ObservationStep, UpdateForm,
};
use resonator::model::{assemble_system, Component, ModelSpec};

fn oracle_for(inst: &common::Instance) -> JointGaussian {
    JointGaussian::new(
        &inst.system,
        &inst.prior.mean,
        &inst.prior.covariance(),
        &inst.data,
        inst.model.noise_variance,
    )
}

#[test]
fn filter_and_smoother_match_joint_conditioning() {
    for seed in 0..6 {
        let inst = random_instance(seed, 20, 8);
        let oracle = oracle_for(&inst);
        let filt = filter_pass(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance).unwrap();
        let smooth = smooth_pass(&inst.system, &filt).unwrap();
        for k in 0..inst.system.len() {
            let (m, c) = oracle.marginal(k, Some(k));
            let f = &filt.steps[k].filtered;
            assert!((&f.mean - &m).abs().max() < 1e-8, "seed {seed} step {k} filtered mean");
            assert!(max_abs_diff(&f.covariance(), &c) < 1e-8, "seed {seed} step {k} filtered cov");
            let (m, c) = oracle.marginal(k, None);
            assert!((&smooth[k].mean - &m).abs().max() < 1e-8, "seed {seed} step {k} smoothed mean");
            assert!(max_abs_diff(&smooth[k].covariance(), &c) < 1e-8, "seed {seed} step {k} smoothed cov");
        }
        let ll = oracle.log_likelihood();
        assert!((filt.log_likelihood - ll).abs() < 1e-8 * ll.abs().max(1.0), "seed {seed}");
        let streamed = log_likelihood(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance).unwrap();
        assert!((streamed - filt.log_likelihood).abs() < 1e-10 * ll.abs().max(1.0));
    }
}

#[test]
fn data_only_at_the_end_smooths_back_like_the_oracle() {
    let mut inst = random_instance(42, 12, 6);
    let last = inst.data.steps.len() - 1;
    let locs: Vec<Point> = inst.data.steps.iter().flat_map(|s| s.locations.clone()).take(3).collect();
    assert_eq!(locs.len(), 3);
    for s in &mut inst.data.steps[..last] {
        s.locations.clear();
        s.values.clear();
    }
    inst.data.steps[last].locations = locs;
    inst.data.steps[last].values = vec![1.0, -0.5, 0.25];
    let basis = inst.model.basis().unwrap();
    inst.system = assemble_system(&inst.model, &basis, &inst.data.times(), &inst.data.locations()).unwrap();
    let oracle = oracle_for(&inst);
    let filt = filter_pass(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance).unwrap();
    let smooth = smooth_pass(&inst.system, &filt).unwrap();
    for (k, b) in smooth.iter().enumerate() {
        let (m, _) = oracle.marginal(k, None);
        assert!((&b.mean - &m).abs().max() < 1e-8, "step {k}");
    }
}

#[test]
fn joseph_form_agrees_with_square_root() {
    let inst = random_instance(7, 15, 8);
    let a = filter_pass(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance).unwrap();
    let b = filter_pass_with(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance, UpdateForm::Joseph).unwrap();
    assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-9);
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert!(max_abs_diff(&x.filtered.covariance(), &y.filtered.covariance()) < 1e-9);
    }
}

#[test]
fn zero_steps_and_empty_steps() {
    let inst = random_instance(3, 5, 4);
    let empty = ObservationBatch::default();
    let ll = log_likelihood(&inst.system, &empty, &inst.prior, 0.1);
    // A system and batch must agree in length; a zero-step pair returns 0.
    assert!(ll.is_err());
    let basis = inst.model.basis().unwrap();
    let none = assemble_system(&inst.model, &basis, &[], &[]).unwrap();
    let out = filter_pass(&none, &empty, &inst.prior, 0.1).unwrap();
    assert_eq!(out.log_likelihood, 0.0);
    assert!(out.steps.is_empty());

    // All steps empty: the filter only predicts.
    let mut blank = inst.data.clone();
    for s in &mut blank.steps {
        s.locations.clear();
        s.values.clear();
    }
    let sys = assemble_system(&inst.model, &basis, &blank.times(), &blank.locations()).unwrap();
    let out = filter_pass(&sys, &blank, &inst.prior, 0.1).unwrap();
    let mut m = inst.prior.mean.clone();
    let mut p = inst.prior.covariance();
    for k in 0..sys.len() {
        if k > 0 {
            let a = sys.transition_matrix(k);
            m = &a * m;
            p = &a * p * a.transpose() + sys.noise_matrix(k);
        }
        assert!((&out.steps[k].filtered.mean - &m).abs().max() < 1e-12);
        assert!(max_abs_diff(&out.steps[k].filtered.covariance(), &p) < 1e-9 * p.abs().max());
    }
    assert_eq!(out.log_likelihood, 0.0);
}

#[test]
fn single_step_smoothed_equals_filtered() {
    let mut inst = random_instance(11, 1, 6);
    inst.data.steps[0].locations = vec![Point::new(0.0, 0.0)];
    // (0, 0) lies inside both the interval and the rectangle variants.
    inst.data.steps[0].values = vec![0.7];
    let basis = inst.model.basis().unwrap();
    inst.system = assemble_system(&inst.model, &basis, &inst.data.times(), &inst.data.locations()).unwrap();
    let filt = filter_pass(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance).unwrap();
    let smooth = smooth_pass(&inst.system, &filt).unwrap();
    assert_eq!(smooth[0], filt.steps[0].filtered);
}

fn insert_empty_steps(data: &ObservationBatch) -> ObservationBatch {
    let mut steps = Vec::new();
    for w in data.steps.windows(2) {
        steps.push(w[0].clone());
        steps.push(ObservationStep {
            time: 0.5 * (w[0].time + w[1].time),
            ..Default::default()
        });
    }
    steps.push(data.steps.last().unwrap().clone());
    ObservationBatch { steps }
}

#[test]
fn empty_steps_do_not_change_posteriors() {
    for seed in 20..24 {
        let inst = random_instance(seed, 10, 6);
        let split = insert_empty_steps(&inst.data);
        let basis = inst.model.basis().unwrap();
        let sys2 = assemble_system(&inst.model, &basis, &split.times(), &split.locations()).unwrap();
        let r = inst.model.noise_variance;
        let a = filter_pass(&inst.system, &inst.data, &inst.prior, r).unwrap();
        let b = filter_pass(&sys2, &split, &inst.prior, r).unwrap();
        assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-10 * a.log_likelihood.abs().max(1.0));
        let sa = smooth_pass(&inst.system, &a).unwrap();
        let sb = smooth_pass(&sys2, &b).unwrap();
        for k in 0..inst.system.len() {
            let fa = &a.steps[k].filtered;
            let fb = &b.steps[2 * k].filtered;
            assert!((&fa.mean - &fb.mean).abs().max() < 1e-10, "seed {seed} step {k}");
            assert!(max_abs_diff(&fa.covariance(), &fb.covariance()) < 1e-10);
            assert!((&sa[k].mean - &sb[2 * k].mean).abs().max() < 1e-10);
            assert!(max_abs_diff(&sa[k].covariance(), &sb[2 * k].covariance()) < 1e-10);
        }
    }
}

#[test]
fn smoothing_never_increases_the_trace() {
    for seed in 30..36 {
        let inst = random_instance(seed, 20, 8);
        let filt = filter_pass(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance).unwrap();
        let smooth = smooth_pass(&inst.system, &filt).unwrap();
        for (f, s) in filt.steps.iter().zip(&smooth) {
            assert!(s.covariance().trace() <= f.filtered.covariance().trace() + 1e-10);
        }
    }
}

#[test]
fn belief_covariance_is_symmetric() {
    let inst = random_instance(5, 10, 8);
    let filt = filter_pass(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance).unwrap();
    for s in &filt.steps {
        let c = s.filtered.covariance();
        assert!(max_abs_diff(&c, &c.transpose()) <= 1e-10 * c.abs().max());
    }
}

fn two_component_model() -> ModelSpec {
    ModelSpec::new(
        Domain::interval(1.0),
        10,
        vec![
            Component::new("wave", 0.3, 0.01, 4.0, Kernel::matern(1.5, 0.3, 1.0)),
            Component::bias("bias", 0.1, 0.0, Kernel::matern(1.5, 0.6, 0.5)),
        ],
        0.05,
    )
}

fn posterior_fixture() -> (ModelSpec, resonator::DiscreteSystem, Vec<GaussianBelief>, Vec<f64>) {
    let model = two_component_model();
    let data = ObservationBatch {
        steps: (0..8)
            .map(|k| ObservationStep {
                time: 0.1 * k as f64,
                locations: vec![Point::on_line(-0.5), Point::on_line(0.2)],
                values: vec![(k as f64).sin(), 0.3],
            })
            .collect(),
    };
    let basis = model.basis().unwrap();
    let sys = assemble_system(&model, &basis, &data.times(), &data.locations()).unwrap();
    let prior = GaussianBelief::from_blocks(&model.prior_blocks(&basis, 0.0).unwrap());
    let filt = filter_pass(&sys, &data, &prior, model.noise_variance).unwrap();
    let smooth = smooth_pass(&sys, &filt).unwrap();
    (model, sys, smooth, data.times())
}

#[test]
fn posterior_vanishes_on_the_boundary_and_sums_components() {
    let (model, sys, beliefs, times) = posterior_fixture();
    let basis = model.basis().unwrap();
    let pts = vec![Point::on_line(-1.0), Point::on_line(0.0), Point::on_line(1.0), Point::on_line(0.4)];
    let all = posterior_at(&sys.layout, &beliefs, &times, &basis, &pts, &ComponentSelector::All).unwrap();
    for k in 0..times.len() {
        for i in [0, 2] {
            for c in &all.components {
                assert!(c.mean[(k, i)].abs() < 1e-12);
                assert!(c.variance[(k, i)].abs() < 1e-12);
            }
        }
    }
    let sum = &all.components[0].mean + &all.components[1].mean;
    assert!(max_abs_diff(&sum, &all.total.mean) < 1e-12);
    let only0 = posterior_at(&sys.layout, &beliefs, &times, &basis, &pts, &ComponentSelector::Only(vec![0])).unwrap();
    let only1 = posterior_at(&sys.layout, &beliefs, &times, &basis, &pts, &ComponentSelector::Only(vec![1])).unwrap();
    assert!(max_abs_diff(&(&only0.total.mean + &only1.total.mean), &all.total.mean) < 1e-12);
    assert!(all.total.variance.iter().all(|v| *v >= 0.0));
}

#[test]
fn observed_locations_are_more_certain_than_unobserved_ones() {
    let model = ModelSpec::new(
        Domain::interval(1.0),
        16,
        vec![Component::new("wave", 0.5, 0.01, 3.0, Kernel::matern(1.5, 0.1, 1.0))],
        1e-4,
    );
    let obs = Point::on_line(-0.5);
    let far = Point::on_line(0.6);
    let data = ObservationBatch {
        steps: vec![ObservationStep {
            time: 0.0,
            locations: vec![obs],
            values: vec![0.4],
        }],
    };
    let basis = model.basis().unwrap();
    let sys = assemble_system(&model, &basis, &data.times(), &data.locations()).unwrap();
    let prior = GaussianBelief::from_blocks(&model.prior_blocks(&basis, 0.0).unwrap());
    let filt = filter_pass(&sys, &data, &prior, model.noise_variance).unwrap();
    let field = posterior_at(&sys.layout, &filt.filtered(), &[0.0], &basis, &[obs, far], &ComponentSelector::All).unwrap();
    assert!(field.total.variance[(0, 0)] < field.total.variance[(0, 1)]);

    // Oracle: condition the prior of f(obs), f(far) directly.
    let h = sys.layout.measurement_matrix(&basis.eval(&[obs, far]).unwrap(), None);
    let p = prior.covariance();
    let k = &h * &p * h.transpose();
    let post_far = k[(1, 1)] - k[(1, 0)] * k[(0, 1)] / (k[(0, 0)] + model.noise_variance);
    assert!((field.total.variance[(0, 1)] - post_far).abs() < 1e-10 * post_far);
}

#[test]
fn scalar_likelihood_increment() {
    // Prior N(0, 1) on the position of a one-mode model, y = 0, R = 1.
    let model = ModelSpec::new(
        Domain::interval(std::f64::consts::FRAC_PI_2),
        1,
        vec![Component::new("c", 1.0, 0.0, 1.0, Kernel::matern(0.5, 1.0, 1.0))],
        1.0,
    );
    let basis = model.basis().unwrap();
    let x = 0.0;
    let psi = basis.eval_point(Point::on_line(x)).unwrap()[0];
    let data = ObservationBatch {
        steps: vec![ObservationStep {
            time: 0.0,
            locations: vec![Point::on_line(x)],
            values: vec![0.0],
        }],
    };
    let sys = assemble_system(&model, &basis, &data.times(), &data.locations()).unwrap();
    let s = 1.0 / psi;
    let prior = GaussianBelief::from_factor(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![s, 1.0]))).unwrap();
    let ll = log_likelihood(&sys, &data, &prior, 1.0).unwrap();
    assert!((ll + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_instances_match_the_oracle(seed in 100u64..10_000, steps in 2usize..12, modes in 2usize..7) {
        let inst = random_instance(seed, steps, modes);
        let oracle = oracle_for(&inst);
        let filt = filter_pass(&inst.system, &inst.data, &inst.prior, inst.model.noise_variance).unwrap();
        let smooth = smooth_pass(&inst.system, &filt).unwrap();
        let k = steps / 2;
        let (m, c) = oracle.marginal(k, None);
        prop_assert!((&smooth[k].mean - &m).abs().max() < 1e-8);
        prop_assert!(max_abs_diff(&smooth[k].covariance(), &c) < 1e-8);
        let ll = oracle.log_likelihood();
        prop_assert!((filt.log_likelihood - ll).abs() < 1e-8 * ll.abs().max(1.0));
    }
}
