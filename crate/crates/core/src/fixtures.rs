//! Hand-wired reference models with known outputs, for exercising the
//! service and CLI without training.
//!
//! Both use the real architectures with almost all weights zero: a single
//! path carries one input signal through to the output unit.

use memscreen_nn::ModelGraph;

use crate::health::ScalerParams;
use crate::models::{build_mod1d, build_mod2d_scaled};

/// Output logit is `8 * signal - 4`, so scores are sigmoid(±4).
const GAIN: f32 = 8.0;
const OFFSET: f32 = -4.0;

fn zero_all(model: &mut ModelGraph<f32>) {
    for p in model.parameters_mut() {
        p.data_mut().fill(0.0);
    }
}

/// Health model whose score is about 0.98 for diabetic records and 0.02
/// otherwise. Pair it with [`reference_scaler`].
pub fn reference_mod1d() -> ModelGraph<f32> {
    let mut m = build_mod1d(0);
    zero_all(&mut m);
    // Conv1D [k, cin, F]: filter 0 copies its first tap.
    m.layer_params_mut(0).unwrap().0.data_mut()[0] = 1.0;
    m.layer_params_mut(1).unwrap().0.data_mut()[0] = 1.0;
    // Flattened [2, 64] index 0 is position 0, channel 0.
    m.layer_params_mut(5).unwrap().0.data_mut()[0] = 1.0;
    let (w, b) = m.layer_params_mut(6).unwrap();
    // Dense [100, 2]: unit 1 (demented) reads hidden unit 0.
    w.data_mut()[1] = GAIN;
    b.data_mut()[1] = OFFSET;
    m
}

/// Scaler mapping diabetic {0, 1} to {-1, 1} and every class code to a
/// non-positive value, so only the diabetic flag survives the first ReLU.
pub fn reference_scaler() -> ScalerParams {
    ScalerParams {
        mean: vec![0.5, 3.0, 3.0, 3.0, 3.0, 3.0],
        std: vec![0.5, 1.0, 1.0, 1.0, 1.0, 1.0],
    }
}

/// Face model on `side × side` inputs whose score is about 0.98 for a
/// uniformly bright red channel and 0.02 for a dark one.
pub fn reference_mod2d(side: usize) -> ModelGraph<f32> {
    let mut m = build_mod2d_scaled(side, 0).expect("side large enough");
    zero_all(&mut m);
    // Conv2D [3, 3, cin, F]: centre tap (1, 1), input channel 0, filter 0.
    for (layer, cin, bias) in [(0, 3, -0.5f32), (2, 32, 0.0), (4, 64, 0.0), (6, 128, 0.0)] {
        let (w, b) = m.layer_params_mut(layer).unwrap();
        let filters = b.len();
        w.data_mut()[(4 * cin) * filters] = 1.0;
        b.data_mut()[0] = bias;
    }
    m.layer_params_mut(9).unwrap().0.data_mut()[0] = 1.0;
    m.layer_params_mut(11).unwrap().0.data_mut()[0] = 1.0;
    let (w, b) = m.layer_params_mut(13).unwrap();
    // Bright input leaves 0.5 on the path.
    w.data_mut()[0] = 2.0 * GAIN;
    b.data_mut()[0] = OFFSET;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::health::HealthRecord;
    use crate::models::{predict_face_tensor, predict_health, PredictionLabel};
    use memscreen_nn::Tensor;

    #[test]
    fn reference_health_model_reads_the_diabetic_flag() {
        let (m, s) = (reference_mod1d(), reference_scaler());
        let mut r = HealthRecord {
            age: 80.0,
            blood_oxygen: 90.0,
            heart_rate: 120.0,
            body_temp: 38.0,
            weight: 90.0,
            diabetic: 1,
            dementia_label: None,
        };
        let yes = predict_health(&m, &r, &s).unwrap();
        r.diabetic = 0;
        let no = predict_health(&m, &r, &s).unwrap();
        assert_eq!(yes.label, PredictionLabel::Demented);
        assert_eq!(no.label, PredictionLabel::NonDemented);
        assert!((yes.score - 0.982).abs() < 1e-3 && (no.score - 0.018).abs() < 1e-3);
    }

    #[test]
    fn reference_face_model_reads_brightness() {
        let m = reference_mod2d(48);
        let bright = predict_face_tensor(&m, &Tensor::full(vec![48, 48, 3], 1.0)).unwrap();
        let dark = predict_face_tensor(&m, &Tensor::zeros(vec![48, 48, 3])).unwrap();
        assert_eq!(bright.label, PredictionLabel::Demented);
        assert_eq!(dark.label, PredictionLabel::NonDemented);
    }
}
