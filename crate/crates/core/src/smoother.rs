//! Fixed-interval RTS smoothing over the epoch history between stops.
//!
//! The forward filter runs closed-loop, so the stored error means are zero;
//! what the backward pass redistributes are the corrections applied by
//! measurement updates. Each [`FilterEpoch`] therefore carries the total
//! correction folded into the navigation state at that epoch, and the
//! smoother runs the standard RTS recursion on "smoothed minus filtered"
//! deltas:
//!
//! * gain      `A_k = P_k Phi_k^T (P_pred_k)^-1`
//! * delta     `s_k = A_k (s_{k+1} - correction_{k+1})`
//! * covariance `P_k_s = P_k + A_k (P_{k+1}_s - P_pred_k) A_k^T`
//!
//! with `s = 0` at the terminal epoch, so the last smoothed state equals the
//! last filtered state. Deltas are folded into total states with
//! [`apply_error_delta`].
//!
//! The forward trace is never altered; smoothing produces a separate stream.

use nalgebra::Cholesky;
use thiserror::Error;

use crate::ekf::{
    Covariance, FilterEpoch, Matrix15, Propagation, Vector15, apply_error_delta, symmetrize,
};
use crate::mechanization::NavState;

/// Default segment capacity: 120 s at 100 Hz.
pub const DEFAULT_MAX_EPOCHS: usize = 12_000;

#[derive(Debug, Error, PartialEq)]
pub enum SmootherError {
    #[error("predicted covariance at epoch {0} is not invertible")]
    SingularPredictedCovariance(usize),
    #[error("segment exceeded {0} epochs between stops")]
    BufferOverflow(usize),
    #[error("cannot smooth an empty segment")]
    EmptySegment,
}

/// Output of one backward pass; index-aligned with the input epochs.
#[derive(Debug, Clone)]
pub struct SmoothedSegment {
    pub times: Vec<f64>,
    pub smoothed_states: Vec<NavState>,
    pub smoothed_covariances: Vec<Covariance>,
}

impl SmoothedSegment {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Backward RTS pass over a time-ordered segment.
pub fn rts_smooth(segment: &[FilterEpoch]) -> Result<SmoothedSegment, SmootherError> {
    let n = segment.len();
    if n == 0 {
        return Err(SmootherError::EmptySegment);
    }
    let mut states = vec![segment[n - 1].nav; n];
    let mut covariances = vec![segment[n - 1].covariance; n];
    let mut delta = Vector15::zeros();

    for k in (0..n - 1).rev() {
        let epoch = &segment[k];
        let predicted = epoch.predicted_covariance;
        let chol = Cholesky::new(predicted)
            .ok_or(SmootherError::SingularPredictedCovariance(k))?;
        // A = P Phi^T P_pred^-1, computed as (P_pred^-1 (Phi P^T))^T
        let gain: Matrix15 = chol
            .solve(&(epoch.transition * epoch.covariance.transpose()))
            .transpose();
        delta = gain * (delta - segment[k + 1].update_correction);
        let p_s = symmetrize(
            &(epoch.covariance + gain * (covariances[k + 1] - predicted) * gain.transpose()),
        );
        states[k] = apply_error_delta(&epoch.nav, &delta);
        covariances[k] = p_s;
    }

    Ok(SmoothedSegment {
        times: segment.iter().map(|e| e.time).collect(),
        smoothed_states: states,
        smoothed_covariances: covariances,
    })
}

/// Collects filter epochs between consecutive stops.
///
/// The pipeline drives it with three events: a snapshot before/after every
/// covariance propagation, the correction vector of every measurement
/// update, and a `take_segment` call when a stop closes. Memory stays
/// bounded at one inter-stop segment.
#[derive(Debug, Clone)]
pub struct SegmentRecorder {
    epochs: Vec<FilterEpoch>,
    pending_correction: Vector15,
    max_epochs: usize,
}

impl Default for SegmentRecorder {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_EPOCHS)
    }
}

impl SegmentRecorder {
    pub fn new(max_epochs: usize) -> Self {
        SegmentRecorder {
            epochs: Vec::new(),
            pending_correction: Vector15::zeros(),
            max_epochs,
        }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Records the epoch that the filter is leaving: `nav`/`covariance` are
    /// the filtered quantities before the propagation, `propagation` the
    /// transition and predicted covariance produced by it.
    pub fn record_propagation(
        &mut self,
        nav: &NavState,
        covariance: &Covariance,
        propagation: &Propagation,
    ) -> Result<(), SmootherError> {
        if self.epochs.len() >= self.max_epochs {
            return Err(SmootherError::BufferOverflow(self.max_epochs));
        }
        self.epochs.push(FilterEpoch {
            time: nav.time,
            nav: *nav,
            covariance: *covariance,
            transition: propagation.transition,
            predicted_covariance: propagation.predicted_covariance,
            update_correction: std::mem::replace(&mut self.pending_correction, Vector15::zeros()),
        });
        Ok(())
    }

    /// Accumulates a measurement-update correction applied at the current
    /// (not yet recorded) epoch.
    pub fn record_correction(&mut self, correction: &Vector15) {
        self.pending_correction += correction;
    }

    /// Closes the segment at the current filter state and hands it off,
    /// leaving the recorder empty for the next segment.
    pub fn take_segment(&mut self, nav: &NavState, covariance: &Covariance) -> Vec<FilterEpoch> {
        let mut epochs = std::mem::take(&mut self.epochs);
        epochs.push(FilterEpoch {
            time: nav.time,
            nav: *nav,
            covariance: *covariance,
            transition: Matrix15::identity(),
            predicted_covariance: *covariance,
            update_correction: std::mem::replace(&mut self.pending_correction, Vector15::zeros()),
        });
        epochs
    }

    /// Drops any buffered epochs (used when smoothing is disabled).
    pub fn clear(&mut self) {
        self.epochs.clear();
        self.pending_correction = Vector15::zeros();
    }
}
