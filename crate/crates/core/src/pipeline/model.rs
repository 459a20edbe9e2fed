use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::geometry::{
    build_epipolar_mask, build_projection_grid, fundamental_from_cameras, CalibrationFile, CameraModel, ProjectionGrid,
    ScenePlaneGrid,
};
use crate::losses::LossScenario;
use crate::maps::{DensityMap, MotionFlow};
use crate::neural_blocks::{extract_graph, run_block, tap_layers, BoundParams, ModelParameters, DECODER, EXTRACTOR};
use crate::sync::{cls_block, cls_flows_graph, sls_graph, Matcher, ScalePlan, SLS_BLOCK};
use crate::tensor::Tensor;

use super::config::{ModelConfig, Variant};

/// Scene grid plus one calibrated camera per view.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub scene: ScenePlaneGrid,
    pub cameras: Vec<CameraModel>,
}

impl Calibration {
    pub fn from_file(file: &CalibrationFile) -> Result<Self> {
        let (scene, cameras) = file.decode()?;
        Ok(Calibration { scene, cameras })
    }
}

/// Precomputed per-view projection grids and epipolar masks.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub scene: ScenePlaneGrid,
    /// `projections[view][scale]`, scales coarsest first.
    pub projections: Vec<Vec<ProjectionGrid>>,
    /// `plans[view][scale]` for the matcher; empty for the reference view.
    pub plans: Vec<Vec<ScalePlan>>,
    /// `shared[view]`: scene cells every scale of both this view and the
    /// reference sees; the similarity loss is taken over these cells.
    pub shared: Vec<Vec<bool>>,
}

impl Geometry {
    pub fn build(config: &ModelConfig, calib: &Calibration) -> Result<Self> {
        if calib.cameras.len() != config.n_views {
            return Err(Error::Config(format!(
                "calibration has {} cameras, model expects {} views",
                calib.cameras.len(),
                config.n_views
            )));
        }
        let mut projections = Vec::with_capacity(config.n_views);
        for cam in &calib.cameras {
            if cam.image_size != config.image_size {
                return Err(Error::Config(format!(
                    "view {} image size {:?} differs from the model's {:?}",
                    cam.view_id, cam.image_size, config.image_size
                )));
            }
            let grids = (0..config.scales)
                .map(|j| {
                    let grid = build_projection_grid(cam, &calib.scene, config.feature_scale(j))?;
                    if grid.source_size != config.feature_size(j) {
                        return Err(Error::shape("projection source", format!("{:?}", config.feature_size(j)), format!("{:?}", grid.source_size)));
                    }
                    Ok(grid)
                })
                .collect::<Result<Vec<_>>>()?;
            projections.push(grids);
        }
        let mut plans = vec![Vec::new(); config.n_views];
        if let Some(matcher) = config.variant.matcher() {
            let reference = &calib.cameras[config.reference_view];
            for (v, cam) in calib.cameras.iter().enumerate() {
                if v == config.reference_view {
                    continue;
                }
                let f = (matcher == Matcher::Epi).then(|| fundamental_from_cameras(reference, cam)).transpose()?;
                for j in 0..config.scales {
                    let pool = config.working_pool(j);
                    let size = config.working_size(j);
                    let mask = match &f {
                        Some(f) => {
                            let scale = config.feature_scale(j) / pool as f64;
                            Some(Arc::new(build_epipolar_mask(f, size, size, config.sigma, scale)?.weights))
                        }
                        None => None,
                    };
                    plans[v].push(ScalePlan { pool, mask });
                }
            }
        }
        let seen = |v: usize, cell: usize| projections[v].iter().all(|g: &ProjectionGrid| g.validity_mask[cell]);
        let cells = calib.scene.grid_size.0 * calib.scene.grid_size.1;
        let r = config.reference_view;
        let shared = (0..config.n_views)
            .map(|v| (0..cells).map(|c| seen(r, c) && seen(v, c)).collect())
            .collect();
        Ok(Geometry {
            scene: calib.scene,
            projections,
            plans,
            shared,
        })
    }
}

/// A model variant: configuration, parameters and (once calibrated) the
/// geometry it runs on.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
    pub geometry: Option<Geometry>,
}

/// Node handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub images: Vec<NodeId>,
    /// Predicted density `[1, rows, cols]` in scaled units.
    pub density: NodeId,
    /// Per non-reference view: CLS flows per scale (coarsest first) or the
    /// single SLS flow.
    pub flows: Vec<(usize, Vec<NodeId>)>,
    /// `ℓ_W` terms, one per view and scale.
    pub warping: Vec<NodeId>,
    /// `ℓ_s` terms, one per view.
    pub similarity: Vec<NodeId>,
    /// Camera-plane features per view and scale, before any warping.
    pub features: Vec<Vec<NodeId>>,
    /// Ground-plane features entering the fusion, per view (after sync).
    pub projected: Vec<NodeId>,
}

/// Scalar losses of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub loss_p: f64,
    pub loss_w: f64,
    pub loss_s: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub density: DensityMap,
    /// Finest-scale flow per non-reference view.
    pub flows: Vec<MotionFlow>,
}

/// Channels per view entering the fusion stage.
pub fn fused_channels(config: &ModelConfig) -> Result<usize> {
    Ok(tap_layers(config.scales)?.iter().map(|&i| config.arch.tap_channels(i)).sum())
}

/// Build parameters for `config`; `cls_epi` needs calibration at assembly
/// time, other variants may be calibrated later with [`Model::calibrate`].
pub fn assemble_model(config: &ModelConfig, calibration: Option<&Calibration>) -> Result<Model> {
    config.validate()?;
    if config.variant == Variant::ClsEpi && calibration.is_none() {
        return Err(Error::Config("cls_epi requires camera calibration".into()));
    }
    let arch = &config.arch;
    let per_view = fused_channels(config)?;
    let mut params = ModelParameters::new(config.seed);
    params.add_block(EXTRACTOR, arch.extractor(), false)?;
    match config.variant {
        Variant::Base => {}
        Variant::Sls => params.add_block(SLS_BLOCK, arch.motion(2 * per_view), true)?,
        Variant::ClsCat | Variant::ClsCor | Variant::ClsEpi => {
            let taps = tap_layers(config.scales)?;
            for (j, &tap) in taps.iter().enumerate() {
                let input = if config.variant == Variant::ClsCat {
                    2 * arch.tap_channels(tap)
                } else {
                    let (h, w) = config.working_size(j);
                    h * w
                };
                params.add_block(&cls_block(j + 1), arch.motion(input), true)?;
            }
        }
    }
    params.add_block(DECODER, arch.decoder(config.n_views * per_view), false)?;
    let geometry = calibration.map(|c| Geometry::build(config, c)).transpose()?;
    Ok(Model {
        config: config.clone(),
        params,
        geometry,
    })
}

fn detached(g: &mut Graph, src: &Graph, ids: &[NodeId]) -> Vec<NodeId> {
    ids.iter().map(|&id| g.constant(src.value(id).clone())).collect()
}

impl Model {
    pub fn calibrate(&mut self, calibration: &Calibration) -> Result<()> {
        self.geometry = Some(Geometry::build(&self.config, calibration)?);
        Ok(())
    }

    pub fn geometry(&self) -> Result<&Geometry> {
        self.geometry
            .as_ref()
            .ok_or_else(|| Error::Config("model has no calibration attached".into()))
    }

    pub fn scene_size(&self) -> Result<(usize, usize)> {
        Ok(self.geometry()?.scene.grid_size)
    }

    fn check_images(&self, images: &[Tensor]) -> Result<()> {
        if images.len() != self.config.n_views {
            return Err(Error::InvalidArgument(format!(
                "expected {} views, got {}",
                self.config.n_views,
                images.len()
            )));
        }
        let (w, h) = self.config.image_size;
        let want = [self.config.arch.image_channels, h, w];
        for t in images {
            if t.shape() != want {
                return Err(Error::shape("input image", format!("{want:?}"), format!("{:?}", t.shape())));
            }
        }
        Ok(())
    }

    /// Camera-plane features of every view, per scale coarsest first.
    fn extract_all(&self, g: &mut Graph, bound: &BoundParams, images: &[NodeId]) -> Result<Vec<Vec<NodeId>>> {
        images
            .iter()
            .map(|&x| Ok(extract_graph(g, &self.params, bound, x, self.config.scales)?.0))
            .collect()
    }

    fn project_view(&self, g: &mut Graph, geo: &Geometry, v: usize, feats: &[NodeId]) -> Result<NodeId> {
        let parts = feats
            .iter()
            .zip(&geo.projections[v])
            .map(|(&f, grid)| g.sample(f, grid.sampling_map()))
            .collect::<Result<Vec<_>>>()?;
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.concat(&parts)
        }
    }

    /// Features of synchronized counterparts, computed without gradient and
    /// inserted as constants.
    fn synced_targets(&self, g: &mut Graph, synced: &[Tensor]) -> Result<(Vec<Vec<NodeId>>, Vec<NodeId>)> {
        let geo = self.geometry()?;
        let mut side = Graph::new();
        let bound = self.params.bind(&mut side, false);
        let inputs: Vec<NodeId> = synced.iter().map(|t| side.constant(t.clone())).collect();
        let feats = self.extract_all(&mut side, &bound, &inputs)?;
        let mut cam = Vec::with_capacity(feats.len());
        let mut proj = Vec::with_capacity(feats.len());
        for (v, f) in feats.iter().enumerate() {
            let p = self.project_view(&mut side, geo, v, f)?;
            cam.push(detached(g, &side, f));
            proj.push(detached(g, &side, &[p])[0]);
        }
        Ok((cam, proj))
    }

    /// Append the forward pass to `g`. `synced` (same-time counterparts of
    /// every view) is only read to form `ℓ_W` targets.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        images: &[Tensor],
        synced: Option<&[Tensor]>,
        with_similarity: bool,
    ) -> Result<ForwardNodes> {
        self.check_images(images)?;
        let geo = self.geometry()?;
        let cfg = &self.config;
        let r = cfg.reference_view;
        let image_ids: Vec<NodeId> = images.iter().map(|t| g.constant(t.clone())).collect();
        let targets = match synced {
            Some(s) if cfg.variant.has_sync() => {
                self.check_images(s)?;
                Some(self.synced_targets(g, s)?)
            }
            _ => None,
        };
        let mut feats = self.extract_all(g, bound, &image_ids)?;
        let raw = feats.clone();
        let mut flows = Vec::new();
        let mut warping = Vec::new();

        if let Some(matcher) = cfg.variant.matcher() {
            for v in (0..cfg.n_views).filter(|&v| v != r) {
                let fl = cls_flows_graph(g, &self.params, bound, matcher, &feats[r], &feats[v], &geo.plans[v])?;
                for (j, &w) in fl.iter().enumerate() {
                    let warped = g.warp(feats[v][j], w)?;
                    feats[v][j] = warped;
                    if let Some((cam, _)) = &targets {
                        warping.push(g.mse(cam[v][j], warped)?);
                    }
                }
                flows.push((v, fl));
            }
        }

        let mut proj = (0..cfg.n_views)
            .map(|v| self.project_view(g, geo, v, &feats[v]))
            .collect::<Result<Vec<_>>>()?;

        if cfg.variant == Variant::Sls {
            for v in (0..cfg.n_views).filter(|&v| v != r) {
                let (warped, flow) = sls_graph(g, &self.params, bound, proj[r], proj[v])?;

                proj[v] = warped;
                if let Some((_, tp)) = &targets {
                    warping.push(g.mse(tp[v], warped)?);
                }
                flows.push((v, vec![flow]));
            }
        }

        let mut similarity = Vec::new();
        if with_similarity && cfg.variant.has_sync() {
            for v in (0..cfg.n_views).filter(|&v| v != r) {
                match g.cosine_loss_within(proj[r], proj[v], Some(&geo.shared[v])) {
                    Ok(s) => similarity.push(s),
                    Err(Error::NoValidLocations) => {
                        log::debug!("similarity loss: no valid locations for view {v}");
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let fused = g.concat(&proj)?;
        let (density, _) = run_block(g, &self.params, bound, DECODER, fused, &[])?;
        Ok(ForwardNodes {
            images: image_ids,
            density,
            flows,
            warping,
            similarity,
            features: raw,
            projected: proj,
        })
    }

    /// Total training loss for one frame tuple. Returns the root node and the
    /// individual loss values.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        images: &[Tensor],
        synced: Option<&[Tensor]>,
        gt: &DensityMap,
    ) -> Result<(NodeId, LossValues)> {
        let loss = &self.config.loss;
        let scenario = if self.config.variant.has_sync() {
            loss.scenario
        } else {
            LossScenario::TaskOnly
        };
        let synced = if scenario == LossScenario::SyncPlusUnsync {
            Some(synced.ok_or_else(|| {
                Error::LossTerm("warping loss needs the synchronized counterpart frames".into())
            })?)
        } else {
            None
        };
        let nodes = self.forward(g, bound, images, synced, scenario == LossScenario::UnsyncOnly)?;
        let (rows, cols) = self.scene_size()?;
        if (gt.rows, gt.cols) != (rows, cols) {
            return Err(Error::shape("ground truth", format!("{rows}x{cols}"), format!("{}x{}", gt.rows, gt.cols)));
        }
        let scale = self.config.density_scale;
        let target = g.constant(Tensor::from_vec(&[1, rows, cols], gt.values.iter().map(|v| v * scale).collect())?);
        let task = g.mse(nodes.density, target)?;
        let mut similarity = nodes.similarity.clone();
        if scenario == LossScenario::UnsyncOnly && similarity.is_empty() {
            similarity.push(g.constant(Tensor::scalar(0.0)));
        }
        let mut cfg = loss.clone();
        cfg.scenario = scenario;
        let total = crate::losses::total_loss_graph(g, task, &nodes.warping, &similarity, &cfg)?;
        let sum = |ids: &[NodeId], g: &Graph| ids.iter().map(|&i| g.scalar(i)).sum::<f64>();
        Ok((
            total,
            LossValues {
                loss_p: g.scalar(task),
                loss_w: sum(&nodes.warping, g),
                loss_s: sum(&similarity, g),
                total: g.scalar(total),
            },
        ))
    }

    /// Inference graph over unsynchronized frames only.
    pub fn inference_graph(&self, images: &[Tensor]) -> Result<(Graph, BoundParams, ForwardNodes)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let nodes = self.forward(&mut g, &bound, images, None, false)?;
        Ok((g, bound, nodes))
    }

    /// Density (in counts) and finest-scale flows for one unsynchronized
    /// frame tuple.
    pub fn predict(&self, images: &[Tensor]) -> Result<Prediction> {
        let (g, _, nodes) = self.inference_graph(images)?;
        let mut density = DensityMap::from_prediction(&g.value(nodes.density).scaled(1.0 / self.config.density_scale))?;
        density.grid = Some(self.geometry()?.scene);
        let r = self.config.reference_view;
        let flows = nodes
            .flows
            .iter()
            .map(|(v, fl)| {
                let last = *fl.last().expect("at least one flow per view");
                MotionFlow::new(g.value(last).clone(), fl.len(), (r, *v))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prediction { density, flows })
    }

    /// Prediction plus the ground-plane features of every view before and
    /// after synchronization (identical for `base`).
    pub fn inspect(&self, images: &[Tensor]) -> Result<Inspection> {
        let (mut g, _, nodes) = self.inference_graph(images)?;
        let geo = self.geometry()?;
        let mut before = Vec::with_capacity(images.len());
        for (v, f) in nodes.features.iter().enumerate() {
            let p = self.project_view(&mut g, geo, v, f)?;
            before.push(g.value(p).clone());
        }
        let after = nodes.projected.iter().map(|&p| g.value(p).clone()).collect();
        let prediction = self.predict(images)?;
        Ok(Inspection {
            prediction,
            before,
            after,
        })
    }
}

/// Intermediate maps of one forward pass.
#[derive(Clone, Debug)]
pub struct Inspection {
    pub prediction: Prediction,
    /// Projected features per view without synchronization.
    pub before: Vec<Tensor>,
    /// Projected features per view as fused.
    pub after: Vec<Tensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_blocks::ArchConfig;

    pub(crate) fn small_calibration() -> Calibration {
        let scene = ScenePlaneGrid::new([0.0, 0.0], 1.0, (6, 8), 1.0).unwrap();
        let cams = (0..3)
            .map(|v| {
                let eye = nalgebra::Vector3::new(-3.0 + 7.0 * v as f64, -6.0, 8.0);
                CameraModel::look_at(
                    v,
                    eye,
                    nalgebra::Vector3::new(4.0, 3.0, 0.0),
                    nalgebra::Vector3::new(0.0, 0.0, 1.0),
                    10.0,
                    (16, 8),
                )
                .unwrap()
            })
            .collect();
        Calibration { scene, cameras: cams }
    }

    fn tiny(variant: Variant) -> ModelConfig {
        let mut c = ModelConfig::new(variant, 3, (16, 8));
        c.arch = ArchConfig {
            width_divisor: 16,
            kernel: 3,
            ..ArchConfig::default()
        };
        c
    }

    fn images(seed: u64) -> Vec<Tensor> {
        (0..3)
            .map(|v| Tensor::from_fn3(1, 8, 16, |_, y, x| (((x * 7 + y * 3 + v * 5) as u64 + seed) % 11) as f64 / 11.0))
            .collect()
    }

    #[test]
    fn epi_needs_calibration() {
        assert!(matches!(assemble_model(&tiny(Variant::ClsEpi), None), Err(Error::Config(_))));
        assert!(assemble_model(&tiny(Variant::ClsEpi), Some(&small_calibration())).is_ok());
    }

    #[test]
    fn every_variant_predicts_scene_sized_maps() {
        let calib = small_calibration();
        for v in [Variant::Base, Variant::Sls, Variant::ClsCat, Variant::ClsCor, Variant::ClsEpi] {
            for m in [1, 2] {
                let mut c = tiny(v);
                c.scales = m;
                let model = assemble_model(&c, Some(&calib)).unwrap();
                let p = model.predict(&images(0)).unwrap();
                assert_eq!((p.density.rows, p.density.cols), (6, 8));
                let expected_flows = if v == Variant::Base { 0 } else { 2 };
                assert_eq!(p.flows.len(), expected_flows, "{v:?}");
                // Zero-initialized motion heads start at the identity warp.
                assert!(p.flows.iter().all(|f| f.flow.data().iter().all(|x| *x == 0.0)));
            }
        }
    }

    #[test]
    fn shared_cells_are_seen_by_both_views() {
        let calib = small_calibration();
        let model = assemble_model(&tiny(Variant::ClsCor), Some(&calib)).unwrap();
        let geo = model.geometry().unwrap();
        for v in 0..3 {
            for (cell, &s) in geo.shared[v].iter().enumerate() {
                let both = [0, v].iter().all(|&u| geo.projections[u].iter().all(|g| g.validity_mask[cell]));
                assert_eq!(s, both);
            }
        }
        assert_eq!(geo.shared[0], geo.projections[0][0].validity_mask);
    }

    #[test]
    fn wrong_view_count_is_rejected() {
        let model = assemble_model(&tiny(Variant::Base), Some(&small_calibration())).unwrap();
        assert!(model.predict(&images(0)[..2]).is_err());
    }

    #[test]
    fn sls_flows_live_on_the_scene_grid() {
        let calib = small_calibration();
        let mut sls = assemble_model(&tiny(Variant::Sls), Some(&calib)).unwrap();
        for (k, t) in sls.params.tensors.iter_mut() {
            if k.starts_with(SLS_BLOCK) {
                *t = t.map(|x| x + 0.05);
            }
        }
        let base = assemble_model(&tiny(Variant::Base), Some(&calib)).unwrap();
        let cls = assemble_model(&tiny(Variant::ClsCor), Some(&calib)).unwrap();
        let imgs = images(3);
        // Camera features come from the same extractor in both models.
        let mut g = Graph::new();
        let (bs, bb) = (sls.params.bind(&mut g, false), base.params.bind(&mut g, false));
        let ids: Vec<NodeId> = imgs.iter().map(|t| g.constant(t.clone())).collect();
        let fs = sls.extract_all(&mut g, &bs, &ids).unwrap();
        let fb = base.extract_all(&mut g, &bb, &ids).unwrap();
        for (a, b) in fs.iter().flatten().zip(fb.iter().flatten()) {
            assert_eq!(g.value(*a), g.value(*b));
        }
        let p = sls.predict(&imgs).unwrap();
        assert!(p.flows.iter().all(|f| (f.height(), f.width()) == (6, 8)));
        assert!(p.flows.iter().any(|f| f.flow.data().iter().any(|x| *x != 0.0)));
        let p = cls.predict(&imgs).unwrap();
        assert!(p.flows.iter().all(|f| (f.height(), f.width()) == (2, 4)));
    }
}
