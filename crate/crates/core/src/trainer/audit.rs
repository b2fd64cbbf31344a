use super::Detector;
use crate::encoder::GradSelection;
use crate::error::Result;

/// Denominator floor for relative errors of near-zero gradients.
pub const AUDIT_FLOOR: f64 = 1e-6;

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl AuditReport {
    fn record(&mut self, name: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(AUDIT_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.max_rel_err || self.checked == 1 {
            self.max_rel_err = rel;
            self.worst = name();
        }
    }
}

/// Compares every encoder and head gradient of the batch loss against
/// central differences with step `h`.
pub fn audit_detector(det: &Detector, images: &[&[f64]], labels: &[u8], h: f64) -> Result<AuditReport> {
    let sel = GradSelection::all(&det.encoder);
    let (_, grads, hg) = det.loss_and_grads(images, labels, &sel)?;
    let empty = GradSelection::new();
    let loss = |d: &Detector| -> Result<f64> { Ok(d.loss_and_grads(images, labels, &empty)?.0) };
    let mut report = AuditReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let mut probe = det.clone();
    for id in det.encoder.param_ids() {
        let analytic = &grads[&id];
        for i in 0..analytic.len() {
            let orig = probe.encoder.param(id)?[i];
            probe.encoder.param_mut(id)?[i] = orig + h;
            let up = loss(&probe)?;
            probe.encoder.param_mut(id)?[i] = orig - h;
            let down = loss(&probe)?;
            probe.encoder.param_mut(id)?[i] = orig;
            report.record(|| format!("{id}[{i}]"), analytic[i], (up - down) / (2.0 * h));
        }
    }
    for i in 0..hg.weight.len() {
        let orig = probe.head.weight[i];
        probe.head.weight[i] = orig + h;
        let up = loss(&probe)?;
        probe.head.weight[i] = orig - h;
        let down = loss(&probe)?;
        probe.head.weight[i] = orig;
        report.record(|| format!("head.weight[{i}]"), hg.weight[i], (up - down) / (2.0 * h));
    }
    let orig = probe.head.bias;
    probe.head.bias = orig + h;
    let up = loss(&probe)?;
    probe.head.bias = orig - h;
    let down = loss(&probe)?;
    report.record(|| "head.bias".into(), hg.bias, (up - down) / (2.0 * h));
    Ok(report)
}
