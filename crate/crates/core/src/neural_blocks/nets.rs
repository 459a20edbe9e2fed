use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::maps::{DensityMap, FeatureMap, FrameOfReference, MotionFlow};
use crate::tensor::Tensor;

use super::params::{bias_name, weight_name, BoundParams, ModelParameters};
use super::spec::{Activation, EXTRACTOR_TAPS};

pub const EXTRACTOR: &str = "extractor";
pub const DECODER: &str = "decoder";

/// Run block `name` on `x`. Returns the block output and the (pre-pool)
/// activations of the layers listed in `taps`.
pub fn run_block(
    g: &mut Graph,
    params: &ModelParameters,
    bound: &BoundParams,
    name: &str,
    x: NodeId,
    taps: &[usize],
) -> Result<(NodeId, Vec<NodeId>)> {
    let spec = params.block(name)?;
    let c = g.value(x).dims3()?.0;
    if c != spec.in_channels() {
        return Err(Error::shape(format!("{name} input channels"), spec.in_channels(), c));
    }
    let mut h = x;
    let mut tapped = Vec::with_capacity(taps.len());
    for (i, l) in spec.layers.iter().enumerate() {
        h = g.conv2d(h, bound.get(&weight_name(name, i))?, bound.get(&bias_name(name, i))?)?;
        if l.activation == Activation::Relu {
            h = g.relu(h);
        }
        if taps.contains(&i) {
            tapped.push(h);
        }
        if l.followed_by_pool {
            h = g.maxpool2(h)?;
        }
    }
    Ok((h, tapped))
}

/// Scales used for `num_scales ∈ 1..=3`, coarsest first.
pub fn tap_layers(num_scales: usize) -> Result<Vec<usize>> {
    if !(1..=3).contains(&num_scales) {
        return Err(Error::Config(format!("num_scales must be 1..=3, got {num_scales}")));
    }
    Ok(EXTRACTOR_TAPS[3 - num_scales..].iter().rev().copied().collect())
}

/// Spatial divisibility required by the extractor's pools.
pub fn check_divisible(params: &ModelParameters, h: usize, w: usize) -> Result<()> {
    let d = 1usize << params.block(EXTRACTOR)?.num_pools();
    if h % d != 0 || w % d != 0 {
        return Err(Error::NotDivisible {
            width: w,
            height: h,
            divisor: d,
            padded_width: w.div_ceil(d) * d,
            padded_height: h.div_ceil(d) * d,
        });
    }
    Ok(())
}

/// Extractor on the graph; per-scale features coarsest first, plus the
/// auxiliary head output when the model has one.
pub fn extract_graph(
    g: &mut Graph,
    params: &ModelParameters,
    bound: &BoundParams,
    image: NodeId,
    num_scales: usize,
) -> Result<(Vec<NodeId>, Option<NodeId>)> {
    let (_, h, w) = g.value(image).dims3()?;
    check_divisible(params, h, w)?;
    let taps = tap_layers(num_scales)?;
    let (out, tapped) = run_block(g, params, bound, EXTRACTOR, image, &taps)?;
    // run_block reports taps in layer order (finest first).
    let mut feats = tapped;
    feats.reverse();
    let aux = (params.block(EXTRACTOR)?.layers.len() > EXTRACTOR_TAPS[2] + 1).then_some(out);
    Ok((feats, aux))
}

fn forward_once(params: &ModelParameters, input: &Tensor, f: impl FnOnce(&mut Graph, &BoundParams, NodeId) -> Result<NodeId>) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(input.clone());
    let out = f(&mut g, &bound, x)?;
    Ok(g.value(out).clone())
}

/// Camera-plane features at `num_scales` scales, coarsest first. Scale `j`
/// (1-based) has spatial size `input / 2^(m − j)` for `m = 3`.
pub fn feature_extract(image: &FeatureMap, params: &ModelParameters, num_scales: usize) -> Result<Vec<FeatureMap>> {
    if image.frame != FrameOfReference::Camera {
        return Err(Error::InvalidArgument("feature_extract expects a camera-plane image".into()));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(image.tensor.clone());
    let (feats, _) = extract_graph(&mut g, params, &bound, x, num_scales)?;
    feats
        .into_iter()
        .map(|id| FeatureMap::new(g.value(id).clone(), image.view_id, image.timestamp, FrameOfReference::Camera))
        .collect()
}

/// Flow for the matcher output `input` using motion block `block`.
pub fn motion_estimate(input: &FeatureMap, params: &ModelParameters, block: &str, view_pair: (usize, usize)) -> Result<MotionFlow> {
    let out = forward_once(params, &input.tensor, |g, b, x| Ok(run_block(g, params, b, block, x, &[])?.0))?;
    MotionFlow::new(out, 1, view_pair)
}

/// Scene-level density from fused (concatenated) projected features.
pub fn decode(fused: &FeatureMap, params: &ModelParameters) -> Result<DensityMap> {
    if fused.frame != FrameOfReference::Scene {
        return Err(Error::InvalidArgument("decode expects scene-plane features".into()));
    }
    let out = forward_once(params, &fused.tensor, |g, b, x| Ok(run_block(g, params, b, DECODER, x, &[])?.0))?;
    DensityMap::from_prediction(&out)
}

/// Bilinear upsampling by an integer `factor`, with displacements rescaled
/// into the finer grid.
pub fn upsample_flow(flow: &MotionFlow, factor: usize) -> Result<MotionFlow> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!("upsampling factor must be at least 2, got {factor}")));
    }
    let (h, w) = (flow.height(), flow.width());
    let data = crate::kernels::resize_forward(flow.flow.data(), 2, h, w, h * factor, w * factor, factor as f64);
    MotionFlow::new(
        Tensor::from_vec(&[2, h * factor, w * factor], data)?,
        flow.scale_index + 1,
        flow.view_pair,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_blocks::ArchConfig;

    fn small_model() -> ModelParameters {
        let a = ArchConfig {
            width_divisor: 8,
            kernel: 3,
            ..ArchConfig::default()
        };
        let mut p = ModelParameters::new(11);
        p.add_block(EXTRACTOR, a.extractor(), false).unwrap();
        p.add_block(DECODER, a.decoder(4), false).unwrap();
        p.add_block("motion", a.motion(6), true).unwrap();
        p
    }

    #[test]
    fn extractor_scale_sizes() {
        let p = small_model();
        let img = FeatureMap::camera(Tensor::from_fn3(1, 8, 12, |_, y, x| ((x * 7 + y * 3) % 5) as f64), 0).unwrap();
        let f = feature_extract(&img, &p, 3).unwrap();
        let sizes: Vec<_> = f.iter().map(|m| (m.channels(), m.height(), m.width())).collect();
        assert_eq!(sizes, [(4, 2, 3), (4, 4, 6), (2, 8, 12)]);
        let f1 = feature_extract(&img, &p, 1).unwrap();
        assert_eq!(f1.len(), 1);
        assert_eq!(f1[0].tensor, f[0].tensor);
    }

    #[test]
    fn non_divisible_input_reports_padding() {
        let p = small_model();
        let img = FeatureMap::camera(Tensor::zeros(&[1, 9, 10]), 0).unwrap();
        match feature_extract(&img, &p, 1) {
            Err(Error::NotDivisible {
                padded_width,
                padded_height,
                divisor,
                ..
            }) => assert_eq!((padded_width, padded_height, divisor), (12, 12, 4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_final_motion_layer_gives_zero_flow() {
        let p = small_model();
        let x = FeatureMap::scene(Tensor::from_fn3(6, 5, 4, |c, y, x| (c + y * x) as f64), 0).unwrap();
        let f = motion_estimate(&x, &p, "motion", (0, 1)).unwrap();
        assert_eq!(f.flow.shape(), [2, 5, 4]);
        assert!(f.flow.data().iter().all(|v| *v == 0.0));
        let bad = FeatureMap::scene(Tensor::zeros(&[5, 5, 4]), 0).unwrap();
        assert!(motion_estimate(&bad, &p, "motion", (0, 1)).is_err());
    }

    #[test]
    fn decode_zero_input_zero_density() {
        let p = small_model();
        let x = FeatureMap::scene(Tensor::zeros(&[4, 6, 7]), 0).unwrap();
        let d = decode(&x, &p).unwrap();
        assert_eq!((d.rows, d.cols), (6, 7));
        assert_eq!(d.count, 0.0);
    }

    #[test]
    fn upsample_constant_flow_doubles() {
        let f = MotionFlow::constant(3, 4, 1.0, 0.0, (0, 1));
        let u = upsample_flow(&f, 2).unwrap();
        assert_eq!(u.flow.shape(), [2, 6, 8]);
        for p in 0..48 {
            assert!((u.flow.data()[p] - 2.0).abs() < 1e-12);
            assert!(u.flow.data()[48 + p].abs() < 1e-12);
        }
        assert!(upsample_flow(&f, 1).is_err());
    }
}
