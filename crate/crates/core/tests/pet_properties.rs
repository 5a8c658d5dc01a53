use amr_core::datagen::{apply_channel, ChannelParams};
use amr_core::nn::Tensor;
use amr_core::pet::{transform_phase, IQFrame, PhaseEstimate};
use amr_core::rng::{substream, Stream};
use num_complex::Complex64;
use proptest::prelude::*;

fn frame(iq: &[(f32, f32)]) -> IQFrame<f32> {
    let i: Vec<f32> = iq.iter().map(|p| p.0).collect();
    let q: Vec<f32> = iq.iter().map(|p| p.1).collect();
    IQFrame::from_iq(&i, &q).unwrap()
}

fn rot(y: &IQFrame<f32>, phi: f32) -> IQFrame<f32> {
    transform_phase(y, PhaseEstimate { phi_hat: phi })
}

fn energy(y: &IQFrame<f32>) -> f64 {
    y.samples().data().iter().map(|&v| (v as f64).powi(2)).sum()
}

fn max_diff(a: &IQFrame<f32>, b: &IQFrame<f32>) -> f32 {
    a.samples()
        .data()
        .iter()
        .zip(b.samples().data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

fn samples() -> impl Strategy<Value = Vec<(f32, f32)>> {
    prop::collection::vec((-2.0f32..2.0, -2.0f32..2.0), 1..=16)
}

proptest! {
    #[test]
    fn zero_phase_is_identity(iq in samples()) {
        let y = frame(&iq);
        prop_assert_eq!(rot(&y, 0.0), y);
    }

    #[test]
    fn rotation_preserves_energy(iq in samples(), phi in -10.0f32..10.0) {
        let y = frame(&iq);
        let (e_in, e_out) = (energy(&y), energy(&rot(&y, phi)));
        prop_assert!((e_in - e_out).abs() <= 1e-5 * e_in.max(1.0), "{e_in} vs {e_out}");
    }

    #[test]
    fn rotations_compose(iq in samples(), a in -3.2f32..3.2, b in -3.2f32..3.2) {
        let y = frame(&iq);
        prop_assert!(max_diff(&rot(&rot(&y, a), b), &rot(&y, a + b)) <= 1e-5);
    }

    #[test]
    fn rotation_inverts(iq in samples(), phi in -3.2f32..3.2) {
        let y = frame(&iq);
        prop_assert!(max_diff(&rot(&rot(&y, phi), -phi), &y) <= 1e-5);
    }

    #[test]
    fn full_turn_is_identity(iq in samples()) {
        let y = frame(&iq);
        prop_assert!(max_diff(&rot(&y, std::f32::consts::TAU), &y) <= 1e-5);
    }

    /// The rotation undoes exactly what a noiseless phase-offset channel does.
    #[test]
    fn channel_phase_is_undone(iq in samples(), phi in -std::f64::consts::PI..std::f64::consts::PI, seed in any::<u64>()) {
        let x: Vec<Complex64> = iq.iter().map(|&(a, b)| Complex64::new(a as f64, b as f64)).collect();
        let ch = ChannelParams { gain: 1.0, omega: 0.0, phi, snr_db: None };
        let y = apply_channel(&x, &ch, &mut substream(seed, Stream::Datagen, 0)).unwrap();
        let yi: Vec<f32> = y.iter().map(|c| c.re as f32).collect();
        let yq: Vec<f32> = y.iter().map(|c| c.im as f32).collect();
        let back = rot(&IQFrame::from_iq(&yi, &yq).unwrap(), phi as f32);
        prop_assert!(max_diff(&back, &frame(&iq)) <= 1e-5);
    }
}

#[test]
fn quarter_turn_swaps_rails() {
    let y = frame(&[(1.0, 0.0), (0.0, 1.0)]);
    let r = rot(&y, std::f32::consts::FRAC_PI_2);
    let want = Tensor::from_vec(&[2, 2], vec![0.0f32, 1.0, -1.0, 0.0]).unwrap();
    for (a, b) in r.samples().data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn frames_reject_bad_shapes_and_values() {
    assert!(IQFrame::<f32>::from_iq(&[1.0], &[1.0, 2.0]).is_err());
    assert!(IQFrame::<f32>::from_iq(&[f32::NAN], &[0.0]).is_err());
    assert!(IQFrame::new(Tensor::<f32>::zeros(&[3, 4])).is_err());
}
