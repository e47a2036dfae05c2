use nalgebra::{DVector, Vector3};

use super::state::{VioState, STATE_DIM};
use crate::error::{Error, Result};
use crate::imu::{mechanize, ImuSample};

/// Propagates the state over one camera interval.
///
/// The window shifts first (`(p2, q2) <- (p1, q1)`, `(p3, q3) <- (p2, q2)`),
/// then the newest pose is integrated through the IMU samples covering the
/// interval: consecutive samples are combined with the midpoint rule (mean
/// body rate, mean world acceleration) and
/// `p <- p + v h + a h^2 / 2`, `v <- v + a h`, `q <- q exp(w h)`.
/// A single sample is held constant over `dt`; if the samples span less than
/// `dt` the last one is held for the remainder. Biases are unchanged.
///
/// Quaternions are not renormalized here so that sigma points keep their
/// norm; the filter renormalizes the mean.
pub fn transition(x: &VioState, samples: &[ImuSample], dt: f64, gravity: &Vector3<f64>) -> VioState {
    let mut out = *x;
    out.p3 = x.p2;
    out.q3 = x.q2;
    out.p2 = x.p1;
    out.q2 = x.q1;
    let bias = x.bias();
    let (mut p, mut v, mut q) = (x.p1, x.v, x.q1);
    let step = |p: &mut Vector3<f64>, v: &mut Vector3<f64>, q: &mut crate::geometry::Quaternion, a: &ImuSample, b: &ImuSample, h: f64| {
        if h <= 0.0 {
            return;
        }
        let ma = mechanize(q, a, &bias, gravity);
        let w = (a.gyro + b.gyro) * 0.5 - bias.gyro;
        let q_next = q.integrate_raw(&w, h);
        let mb = mechanize(&q_next, b, &bias, gravity);
        let acc = (ma.world_accel + mb.world_accel) * 0.5;
        *p += *v * h + acc * (0.5 * h * h);
        *v += acc * h;
        *q = q_next;
    };
    match samples {
        [] => {
            p += v * dt;
        }
        [only] => step(&mut p, &mut v, &mut q, only, only, dt),
        _ => {
            for pair in samples.windows(2) {
                step(&mut p, &mut v, &mut q, &pair[0], &pair[1], pair[1].t - pair[0].t);
            }
            let span = samples[samples.len() - 1].t - samples[0].t;
            let rest = dt - span;
            if rest > 1e-9 * dt.max(1.0) {
                let last = &samples[samples.len() - 1];
                step(&mut p, &mut v, &mut q, last, last, rest);
            }
        }
    }
    out.p1 = p;
    out.v = v;
    out.q1 = q;
    out
}

/// [`transition`] on a packed state vector.
pub fn transition_vector(
    x: &DVector<f64>,
    samples: &[ImuSample],
    dt: f64,
    gravity: &Vector3<f64>,
) -> DVector<f64> {
    debug_assert_eq!(x.len(), STATE_DIM);
    transition(&VioState::unpack_unchecked(x), samples, dt, gravity).pack()
}

pub(crate) fn check_interval(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("frame interval {dt} must be positive")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Quaternion, RigidPose};
    use crate::imu::{default_gravity, synthesize, ImuBias, ImuNoiseSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn level_sample(t: f64, q: &Quaternion, a_world: Vector3<f64>, w: Vector3<f64>) -> ImuSample {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        synthesize(
            t,
            &a_world,
            &w,
            q,
            &ImuBias::default(),
            &default_gravity(),
            &ImuNoiseSpec::zero(),
            &mut rng,
        )
    }

    #[test]
    fn constant_velocity_and_window_shift() {
        let mut x = VioState::at_rest(&RigidPose::identity(), Vector3::new(1.0, 0.0, 0.0));
        x.p2 = Vector3::new(-1.0, 0.0, 0.0);
        let q = Quaternion::IDENTITY;
        let s = [
            level_sample(0.0, &q, Vector3::zeros(), Vector3::zeros()),
            level_sample(1.0, &q, Vector3::zeros(), Vector3::zeros()),
        ];
        let y = transition(&x, &s, 1.0, &default_gravity());
        assert!((y.p1 - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(y.p2, x.p1);
        assert_eq!(y.p3, x.p2);
        assert_eq!(y.q2, x.q1);
    }

    #[test]
    fn constant_acceleration_half_a_t_squared() {
        let x = VioState::at_rest(&RigidPose::identity(), Vector3::zeros());
        let q = Quaternion::IDENTITY;
        let a = Vector3::new(0.0, 0.0, 1.0);
        let s = [level_sample(0.0, &q, a, Vector3::zeros())];
        let y = transition(&x, &s, 1.0, &default_gravity());
        assert!((y.p1 - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        assert!((y.v - a).norm() < 1e-12);
    }

    #[test]
    fn zero_input_at_rest_is_pure_shift() {
        let mut x = VioState::at_rest(
            &RigidPose::new(Quaternion::from_euler(0.1, -0.2, 0.7), Vector3::new(3.0, 4.0, 5.0)),
            Vector3::zeros(),
        );
        x.p2 = Vector3::new(1.0, 1.0, 1.0);
        x.q2 = Quaternion::from_euler(0.0, 0.0, 0.3);
        let q = x.q1;
        let s: Vec<ImuSample> = (0..11)
            .map(|i| level_sample(i as f64 * 0.01, &q, Vector3::zeros(), Vector3::zeros()))
            .collect();
        let y = transition(&x, &s, 0.1, &default_gravity());
        assert!((y.p1 - x.p1).norm() < 1e-12);
        assert_eq!((y.p2, y.q2, y.p3, y.q3), (x.p1, x.q1, x.p2, x.q2));
    }

    #[test]
    fn packed_matches_struct() {
        let x = VioState::at_rest(&RigidPose::identity(), Vector3::new(2.0, 0.0, 0.0));
        let s = [level_sample(0.0, &Quaternion::IDENTITY, Vector3::zeros(), Vector3::new(0.0, 0.0, 0.1))];
        let a = transition(&x, &s, 0.1, &default_gravity()).pack();
        let b = transition_vector(&x.pack(), &s, 0.1, &default_gravity());
        assert_eq!(a, b);
    }
}
