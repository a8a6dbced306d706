use rand_chacha::ChaCha8Rng;

use super::config::DenoiserConfig;
use super::manifest::{LayerKind, LayerPath, LayerSpec, StructuralAudit};
use crate::diffusion::{NoisePredictor, NoiseTensor};
use crate::error::{Error, Result};
use crate::geometry::{knn, nearest_neighbor, voxelize, PointCloud, VoxelAssignment};
use crate::nn::{Activation, ConvGeom, Graph, ParamId, ParamStore, Tensor, Var};
use crate::seed::rng;

/// Width of the positional block: voxel center, point, offset, squared distance.
pub const POS_FEATURES: usize = 10;

const POINT_ACT: Activation = Activation::LeakyRelu;
const GRID_ACT: Activation = Activation::ScaledTanh;

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    geom: ConvGeom,
}

#[derive(Debug, Clone, Copy)]
struct Mlp2 {
    l1: Dense,
    l2: Dense,
}

#[derive(Debug, Clone, Copy)]
struct ResBlock {
    l1: Dense,
    l2: Dense,
    skip: Dense,
}

#[derive(Debug, Clone, Copy)]
struct Mprb {
    paths: [Conv; 3],
    proj: Conv,
}

#[derive(Debug, Clone, Copy)]
struct HybridFirst {
    pos: ParamId,
    group: ParamId,
    points: ParamId,
    matched: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layers {
    init: Mlp2,
    stem: Conv,
    mprb: Vec<Mprb>,
    unet_enc: Vec<Conv>,
    unet_dec: Vec<Conv>,
    unet_out: Conv,
    cond: Vec<ResBlock>,
    matcher: Mlp2,
    points: Mlp2,
    weight_l1: HybridFirst,
    weight_l2: Dense,
    head: Mlp2,
}

struct Builder {
    store: ParamStore,
    manifest: Vec<LayerSpec>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn dense(&mut self, name: &str, path: LayerPath, din: usize, dout: usize, bias: bool) -> Dense {
        let w = self
            .store
            .add_uniform(format!("{name}.weight"), vec![dout, din], din, 1.0, &mut self.rng);
        let b = bias.then(|| self.store.add_zeros(format!("{name}.bias"), vec![dout]));
        self.manifest.push(LayerSpec {
            name: name.to_string(),
            path,
            kind: LayerKind::Linear,
            in_channels: din,
            out_channels: dout,
            kernel: [1, 1, 1],
            dilation: [1, 1, 1],
            bias,
            normalization: false,
        });
        Dense { w, b }
    }

    fn conv(&mut self, name: &str, path: LayerPath, kind: LayerKind, geom: ConvGeom) -> Conv {
        let [kx, ky, kz] = geom.kernel;
        let w = self.store.add_uniform(
            format!("{name}.weight"),
            vec![kx, ky, kz, geom.cout, geom.cin],
            geom.taps() * geom.cin,
            1.0,
            &mut self.rng,
        );
        self.manifest.push(LayerSpec {
            name: name.to_string(),
            path,
            kind,
            in_channels: geom.cin,
            out_channels: geom.cout,
            kernel: geom.kernel,
            dilation: geom.dilation,
            bias: false,
            normalization: false,
        });
        Conv { w, geom }
    }

    fn mlp2(&mut self, name: &str, path: LayerPath, din: usize, hidden: usize, dout: usize) -> Mlp2 {
        Mlp2 {
            l1: self.dense(&format!("{name}.l1"), path, din, hidden, true),
            l2: self.dense(&format!("{name}.l2"), path, hidden, dout, true),
        }
    }
}

/// Voxel features together with the occupancy they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFeatureGrid {
    pub resolution: [usize; 3],
    pub channels: usize,
    /// Channels-last: `features[voxel * channels + c]`.
    pub features: Vec<f64>,
    pub occupancy: Vec<bool>,
}

impl VoxelFeatureGrid {
    pub fn feature(&self, c: usize, linear_voxel: usize) -> f64 {
        self.features[linear_voxel * self.channels + c]
    }

    pub fn voxel(&self, linear_voxel: usize) -> &[f64] {
        &self.features[linear_voxel * self.channels..(linear_voxel + 1) * self.channels]
    }
}

/// Every intermediate of the point-voxel interaction, materialized for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionBundle {
    pub points: usize,
    pub k: usize,
    /// `[N*K, 10]`
    pub f_pos: Tensor,
    /// `[N*K, C]`
    pub f_group: Tensor,
    /// `[N, C_p]`
    pub f_points: Tensor,
    /// `[N, match_dim]`
    pub f_match: Tensor,
    /// `[N*K, 10 + C + C_p + match_dim]`, per-point blocks broadcast over K.
    pub f_hybr: Tensor,
    /// `[N*K, C]`
    pub weights: Tensor,
    /// Occupied-voxel linear indices gathered per point, `[N*K]`.
    pub neighbor_voxels: Vec<usize>,
    pub eps: NoiseTensor,
}

/// Graph handles of one forward pass.
pub struct Trace {
    pub eps: Var,
    pub assignment: VoxelAssignment,
    pub grid_init: Var,
    pub grid_completed: Var,
    pub grid_refined: Var,
    pub f_match: Var,
    pub f_points: Var,
    pub interaction: Option<InteractionVars>,
}

pub struct InteractionVars {
    pub f_pos: Var,
    pub f_group: Var,
    pub weights: Var,
    pub neighbor_voxels: Vec<usize>,
}

/// Sinusoidal step embedding: entry `2i` is `sin(t * w_i)`, entry `2i + 1` is
/// `cos(t * w_i)`, with `w_i` geometric from 1 down to 1e-4.
pub fn time_embed(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = if half > 1 {
            10_000f64.powf(-(i as f64) / (half - 1) as f64)
        } else {
            1.0
        };
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// The noise predictor: parameters, their structural manifest and the forward pass.
#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
    manifest: Vec<LayerSpec>,
    layers: Layers,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            manifest: Vec::new(),
            rng: rng(seed),
        };
        let c = &config;
        let cv = c.voxel_channels;
        let dims = c.grid.resolution;
        let g3 = |k: usize, d: usize, cin: usize, cout: usize| ConvGeom {
            dims,
            kernel: [k; 3],
            dilation: [d; 3],
            cin,
            cout,
        };

        let init = b.mlp2("init", LayerPath::VoxelInit, 6 + c.time_embed_dim, c.init_hidden, cv);

        let stem = b.conv("completion.stem", LayerPath::Completion, LayerKind::Conv3d, g3(3, 1, cv, cv));
        let mprb = (0..3)
            .map(|i| {
                let paths = [0, 1, 2].map(|j| {
                    b.conv(
                        &format!("completion.mprb{i}.path{j}"),
                        LayerPath::Completion,
                        LayerKind::Conv3d,
                        g3(c.mprb_kernels[j], c.mprb_dilations[j], cv, cv),
                    )
                });
                let proj = b.conv(
                    &format!("completion.mprb{i}.proj"),
                    LayerPath::Completion,
                    LayerKind::Conv3d,
                    g3(1, 1, 3 * cv, cv),
                );
                Mprb { paths, proj }
            })
            .collect();

        let folded = dims[2] * cv;
        let widths: Vec<usize> = (0..c.unet_depth).map(|l| c.unet_width << l).collect();
        let plane = |level: usize, cin: usize, cout: usize| ConvGeom {
            dims: [dims[0] >> level, dims[1] >> level, 1],
            kernel: [3, 3, 1],
            dilation: [1, 1, 1],
            cin,
            cout,
        };
        let unet_enc = (0..c.unet_depth)
            .map(|l| {
                let cin = if l == 0 { folded } else { widths[l - 1] };
                b.conv(&format!("unet.enc{l}"), LayerPath::Unet, LayerKind::Conv2d, plane(l, cin, widths[l]))
            })
            .collect();
        let unet_dec = (0..c.unet_depth - 1)
            .map(|l| {
                b.conv(
                    &format!("unet.dec{l}"),
                    LayerPath::Unet,
                    LayerKind::Conv2d,
                    plane(l, widths[l + 1] + widths[l], widths[l]),
                )
            })
            .collect();
        let unet_out = b.conv("unet.out", LayerPath::Unet, LayerKind::Conv2d, plane(0, widths[0], folded));

        let mut cin = 3;
        let cond = c
            .cond_channels
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let blk = ResBlock {
                    l1: b.dense(&format!("cond.block{i}.l1"), LayerPath::Condition, cin, w, true),
                    l2: b.dense(&format!("cond.block{i}.l2"), LayerPath::Condition, w, w, true),
                    skip: b.dense(&format!("cond.block{i}.skip"), LayerPath::Condition, cin, w, false),
                };
                cin = w;
                blk
            })
            .collect();
        let c4 = c.cond_channels[3];
        let matcher = b.mlp2("match", LayerPath::Match, c4, c.match_dim, c.match_dim);
        let points = b.mlp2("points", LayerPath::Points, 3, c.point_channels, c.point_channels);

        let hybr_width = POS_FEATURES + cv + c.point_channels + c.match_dim;
        let hw = c.weight_hidden;
        let mut split = |part: &str, din: usize| {
            b.store
                .add_uniform(format!("weight.l1.{part}"), vec![hw, din], hybr_width, 1.0, &mut b.rng)
        };
        let weight_l1 = HybridFirst {
            pos: split("pos", POS_FEATURES),
            group: split("group", cv),
            points: split("points", c.point_channels),
            matched: split("match", c.match_dim),
            bias: b.store.add_zeros("weight.l1.bias", vec![hw]),
        };
        b.manifest.push(LayerSpec {
            name: "weight.l1".into(),
            path: LayerPath::Interaction,
            kind: LayerKind::Linear,
            in_channels: hybr_width,
            out_channels: hw,
            kernel: [1, 1, 1],
            dilation: [1, 1, 1],
            bias: true,
            normalization: false,
        });
        let weight_l2 = b.dense("weight.l2", LayerPath::Interaction, hw, cv, true);
        let head_in = if c.use_interaction {
            cv
        } else {
            cv + c.point_channels + c.match_dim
        };
        let head = b.mlp2("head", LayerPath::Head, head_in, c.head_hidden, 3);

        Ok(Self {
            layers: Layers {
                init,
                stem,
                mprb,
                unet_enc,
                unet_dec,
                unet_out,
                cond,
                matcher,
                points,
                weight_l1,
                weight_l2,
                head,
            },
            config,
            params: b.store,
            manifest: b.manifest,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn manifest(&self) -> &[LayerSpec] {
        &self.manifest
    }

    pub fn audit(&self) -> StructuralAudit {
        StructuralAudit::of(&self.manifest)
    }

    fn dense(&self, g: &mut Graph, x: Var, d: Dense) -> Var {
        let w = g.param(&self.params, d.w);
        let b = d.b.map(|b| g.param(&self.params, b));
        g.linear(x, w, b)
    }

    fn mlp2(&self, g: &mut Graph, x: Var, m: Mlp2) -> Var {
        let h = self.dense(g, x, m.l1);
        let h = g.act(h, POINT_ACT);
        self.dense(g, h, m.l2)
    }

    fn conv(&self, g: &mut Graph, x: Var, c: Conv) -> Var {
        let w = g.param(&self.params, c.w);
        g.conv(x, w, c.geom)
    }

    fn coords_tensor(&self, cloud: &PointCloud) -> Tensor {
        let data = if self.config.absolute_coords {
            cloud.flat()
        } else {
            vec![0.0; 3 * cloud.len()]
        };
        Tensor::new(cloud.len(), 3, data)
    }

    /// Pointwise two-layer transform of (offset, noisy point, step embedding),
    /// mean-reduced per occupied voxel into a dense `[voxels, C]` grid.
    pub fn record_voxel_init(
        &self,
        g: &mut Graph,
        noisy: &PointCloud,
        assign: &VoxelAssignment,
        t: usize,
    ) -> Result<Var> {
        if assign.voxel_index.len() != noisy.len() {
            return Err(Error::ShapeMismatch(format!(
                "assignment covers {} points, cloud has {}",
                assign.voxel_index.len(),
                noisy.len()
            )));
        }
        let spec = &self.config.grid;
        let emb = time_embed(t, self.config.time_embed_dim);
        let width = 6 + emb.len();
        let mut members = Vec::new();
        for (i, v) in assign.voxel_index.iter().enumerate() {
            let Some(idx) = *v else { continue };
            if (0..3).any(|a| idx[a] >= spec.resolution[a]) {
                return Err(Error::ShapeMismatch(format!(
                    "voxel {idx:?} outside the configured grid {:?}",
                    spec.resolution
                )));
            }
            members.push((spec.linear_index(idx), i));
        }
        // Fixed summation order inside each voxel, so the grid does not depend
        // on point order down to the last bit.
        let pts = noisy.points();
        members.sort_by(|&(la, a), &(lb, b)| {
            la.cmp(&lb).then_with(|| {
                (0..3)
                    .map(|k| pts[a][k].total_cmp(&pts[b][k]))
                    .chain((0..3).map(|k| assign.offset[a][k].total_cmp(&assign.offset[b][k])))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let mut rows = Vec::with_capacity(members.len() * width);
        let mut seg = Vec::with_capacity(members.len());
        for &(linear, i) in &members {
            let p = &pts[i];
            rows.extend_from_slice(&assign.offset[i]);
            if self.config.absolute_coords {
                rows.extend_from_slice(p);
            } else {
                rows.extend_from_slice(&[0.0; 3]);
            }
            rows.extend_from_slice(&emb);
            seg.push(Some(linear));
        }
        let n = seg.len();
        let x = g.input(Tensor::new(n, width, rows));
        let h = self.mlp2(g, x, self.layers.init);
        Ok(g.segment_mean(h, seg, spec.num_voxels()))
    }

    /// Stem convolution, three multi-path residual blocks, fused with the input.
    pub fn record_completion(&self, g: &mut Graph, grid: Var) -> Var {
        if !self.config.use_completion {
            return grid;
        }
        let stem = self.conv(g, grid, self.layers.stem);
        let mut x = g.act(stem, GRID_ACT);
        for block in &self.layers.mprb {
            let mut outs = Vec::with_capacity(3);
            for path in block.paths {
                let y = self.conv(g, x, path);
                let y = g.act(y, GRID_ACT);
                outs.push(g.add(y, x));
            }
            let cat = g.concat(&outs);
            x = self.conv(g, cat, block.proj);
        }
        g.add(x, grid)
    }

    /// Planar encoder-decoder over (x, y) with z folded into channels, plus a
    /// global residual.
    pub fn record_unet(&self, g: &mut Graph, grid: Var) -> Var {
        if !self.config.use_unet {
            return grid;
        }
        let [nx, ny, nz] = self.config.grid.resolution;
        let folded = g.reshape(grid, nz * self.config.voxel_channels);
        let mut skips = Vec::new();
        let mut x = folded;
        for (l, enc) in self.layers.unet_enc.iter().enumerate() {
            if l > 0 {
                x = g.avg_pool2(x, [nx >> (l - 1), ny >> (l - 1)]);
            }
            let y = self.conv(g, x, *enc);
            x = g.act(y, GRID_ACT);
            skips.push(x);
        }
        for l in (0..self.layers.unet_dec.len()).rev() {
            let up = g.upsample2(x, [nx >> l, ny >> l]);
            let cat = g.concat(&[up, skips[l]]);
            let y = self.conv(g, cat, self.layers.unet_dec[l]);
            x = g.act(y, GRID_ACT);
        }
        let out = self.conv(g, x, self.layers.unet_out);
        let out = g.add(out, folded);
        g.reshape(out, self.config.voxel_channels)
    }

    /// Four pointwise residual blocks of increasing width over the sparse cloud.
    pub fn record_condition(&self, g: &mut Graph, sparse: &PointCloud) -> Var {
        let mut x = g.input(self.coords_tensor(sparse));
        for blk in &self.layers.cond {
            let h = self.dense(g, x, blk.l1);
            let h = g.act(h, POINT_ACT);
            let h = self.dense(g, h, blk.l2);
            let s = self.dense(g, x, blk.skip);
            let y = g.add(h, s);
            x = g.act(y, POINT_ACT);
        }
        x
    }

    /// Condition features at each input point's nearest sparse point, refined
    /// to `match_dim`. The refinement is pointwise, so it runs on the sparse
    /// rows before the gather.
    pub fn record_match(
        &self,
        g: &mut Graph,
        input: &PointCloud,
        sparse: &PointCloud,
        cond_feats: Var,
    ) -> Result<(Var, Vec<usize>)> {
        if sparse.is_empty() {
            return Err(Error::InvalidArgument("match features need a non-empty sparse cloud".into()));
        }
        if g.value(cond_feats).rows != sparse.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} condition feature rows for {} sparse points",
                g.value(cond_feats).rows,
                sparse.len()
            )));
        }
        let nn = nearest_neighbor(input.points(), sparse.points())?;
        let refined = self.mlp2(g, cond_feats, self.layers.matcher);
        Ok((g.gather(refined, nn.clone()), nn))
    }

    /// Null-condition stand-in for the match features.
    pub fn null_match(&self, g: &mut Graph, n: usize) -> Var {
        g.input(Tensor::zeros(n, self.config.match_dim))
    }

    pub fn record_points(&self, g: &mut Graph, input: &PointCloud) -> Var {
        let x = g.input(self.coords_tensor(input));
        self.mlp2(g, x, self.layers.points)
    }

    /// Per point: gather K nearest occupied voxels, build positional and hybrid
    /// features, weight the grouped voxel features, average over K and map to noise.
    pub fn record_interaction(
        &self,
        g: &mut Graph,
        input: &PointCloud,
        assign: &VoxelAssignment,
        grid: Var,
        f_points: Var,
        f_match: Var,
    ) -> Result<(Var, InteractionVars)> {
        let k = self.config.neighbors;
        let spec = &self.config.grid;
        if assign.occupied.len() < k {
            return Err(Error::NotEnoughPoints {
                needed: k,
                available: assign.occupied.len(),
            });
        }
        let centers: Vec<_> = assign
            .occupied
            .iter()
            .map(|&l| spec.center_unchecked(spec.unravel(l)))
            .collect();
        let nb = knn(input.points(), &centers, k)?;
        let n = input.len();
        let neighbor_voxels: Vec<usize> = nb.indices.iter().map(|&s| assign.occupied[s]).collect();
        let mut pos = Vec::with_capacity(n * k * POS_FEATURES);
        for (i, p) in input.points().iter().enumerate() {
            for &slot in &nb.indices[i * k..(i + 1) * k] {
                let v = centers[slot];
                let d = [v[0] - p[0], v[1] - p[1], v[2] - p[2]];
                if self.config.absolute_coords {
                    pos.extend_from_slice(&v);
                    pos.extend_from_slice(p);
                } else {
                    pos.extend_from_slice(&[0.0; 6]);
                }
                pos.extend_from_slice(&d);
                pos.push(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            }
        }
        let f_pos = g.input(Tensor::new(n * k, POS_FEATURES, pos));
        let f_group = g.gather(grid, neighbor_voxels.clone());

        let l1 = self.layers.weight_l1;
        let per_point = {
            let wp = g.param(&self.params, l1.points);
            let wm = g.param(&self.params, l1.matched);
            let b = g.param(&self.params, l1.bias);
            let a = g.linear(f_points, wp, Some(b));
            let m = g.linear(f_match, wm, None);
            g.add(a, m)
        };
        let broadcast: Vec<usize> = (0..n * k).map(|r| r / k).collect();
        let per_point = g.gather(per_point, broadcast);
        let wpos = g.param(&self.params, l1.pos);
        let wgrp = g.param(&self.params, l1.group);
        let hp = g.linear(f_pos, wpos, None);
        let hg = g.linear(f_group, wgrp, None);
        let h = g.add(hp, hg);
        let h = g.add(h, per_point);
        let h = g.act(h, POINT_ACT);
        let weights = self.dense(g, h, self.layers.weight_l2);
        let weighted = g.mul(weights, f_group);
        let seg = (0..n * k).map(|r| Some(r / k)).collect();
        let agg = g.segment_mean(weighted, seg, n);
        let eps = self.mlp2(g, agg, self.layers.head);
        Ok((
            eps,
            InteractionVars {
                f_pos,
                f_group,
                weights,
                neighbor_voxels,
            },
        ))
    }

    /// Full forward pass recorded on `g`; `condition = None` is the null condition.
    pub fn record(
        &self,
        g: &mut Graph,
        noisy: &PointCloud,
        condition: Option<&PointCloud>,
        t: usize,
    ) -> Result<Trace> {
        if noisy.is_empty() {
            return Err(Error::InvalidArgument("denoiser input is empty".into()));
        }
        let assignment = voxelize(noisy, &self.config.grid)?;
        let grid_init = self.record_voxel_init(g, noisy, &assignment, t)?;
        let grid_completed = self.record_completion(g, grid_init);
        let grid_refined = self.record_unet(g, grid_completed);
        let f_match = match condition {
            Some(c) => {
                let feats = self.record_condition(g, c);
                self.record_match(g, noisy, c, feats)?.0
            }
            None => self.null_match(g, noisy.len()),
        };
        let f_points = self.record_points(g, noisy);
        let (eps, interaction) = if self.config.use_interaction {
            let (eps, vars) =
                self.record_interaction(g, noisy, &assignment, grid_refined, f_points, f_match)?;
            (eps, Some(vars))
        } else {
            let spec = &self.config.grid;
            if assignment.occupied.is_empty() {
                return Err(Error::NotEnoughPoints { needed: 1, available: 0 });
            }
            let centers: Vec<_> = assignment
                .occupied
                .iter()
                .map(|&l| spec.center_unchecked(spec.unravel(l)))
                .collect();
            let own = nearest_neighbor(noisy.points(), &centers)?
                .into_iter()
                .map(|s| assignment.occupied[s])
                .collect();
            let f_own = g.gather(grid_refined, own);
            let cat = g.concat(&[f_own, f_points, f_match]);
            (self.mlp2(g, cat, self.layers.head), None)
        };
        Ok(Trace {
            eps,
            assignment,
            grid_init,
            grid_completed,
            grid_refined,
            f_match,
            f_points,
            interaction,
        })
    }

    /// Per-point noise estimate for `noisy` at step `t`.
    pub fn denoise(
        &self,
        noisy: &PointCloud,
        condition: Option<&PointCloud>,
        t: usize,
    ) -> Result<NoiseTensor> {
        let mut g = Graph::new();
        let trace = self.record(&mut g, noisy, condition, t)?;
        NoiseTensor::from_flat(&g.value(trace.eps).data)
    }

    /// Runs a forward pass and materializes the interaction intermediates.
    pub fn interaction_bundle(
        &self,
        noisy: &PointCloud,
        condition: Option<&PointCloud>,
        t: usize,
    ) -> Result<InteractionBundle> {
        let mut g = Graph::new();
        let trace = self.record(&mut g, noisy, condition, t)?;
        let vars = trace
            .interaction
            .ok_or_else(|| Error::InvalidArgument("interaction module is disabled".into()))?;
        let k = self.config.neighbors;
        let n = noisy.len();
        let f_pos = g.value(vars.f_pos).clone();
        let f_group = g.value(vars.f_group).clone();
        let f_points = g.value(trace.f_points).clone();
        let f_match = g.value(trace.f_match).clone();
        let width = f_pos.cols + f_group.cols + f_points.cols + f_match.cols;
        let mut hyb = Vec::with_capacity(n * k * width);
        for r in 0..n * k {
            hyb.extend_from_slice(f_pos.row(r));
            hyb.extend_from_slice(f_group.row(r));
            hyb.extend_from_slice(f_points.row(r / k));
            hyb.extend_from_slice(f_match.row(r / k));
        }
        Ok(InteractionBundle {
            points: n,
            k,
            f_hybr: Tensor::new(n * k, width, hyb),
            weights: g.value(vars.weights).clone(),
            neighbor_voxels: vars.neighbor_voxels,
            eps: NoiseTensor::from_flat(&g.value(trace.eps).data)?,
            f_pos,
            f_group,
            f_points,
            f_match,
        })
    }

    /// Parameters of the first hybrid-weight layer laid out as one `[hidden, width]`
    /// matrix over the concatenated hybrid feature, plus its bias.
    pub fn hybrid_weight_matrix(&self) -> (Tensor, Vec<f64>) {
        let l1 = self.layers.weight_l1;
        let parts = [l1.pos, l1.group, l1.points, l1.matched].map(|id| self.params.get(id));
        let hidden = parts[0].shape[0];
        let width: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(hidden * width);
        for r in 0..hidden {
            for p in &parts {
                let c = p.shape[1];
                data.extend_from_slice(&p.data[r * c..(r + 1) * c]);
            }
        }
        (
            Tensor::new(hidden, width, data),
            self.params.get(l1.bias).data.clone(),
        )
    }

    /// Ids of every condition-encoder and match-refinement parameter.
    pub fn condition_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for blk in &self.layers.cond {
            for d in [blk.l1, blk.l2, blk.skip] {
                ids.push(d.w);
                ids.extend(d.b);
            }
        }
        for d in [self.layers.matcher.l1, self.layers.matcher.l2] {
            ids.push(d.w);
            ids.extend(d.b);
        }
        ids
    }
}

impl NoisePredictor for Denoiser {
    fn predict(
        &self,
        noisy: &PointCloud,
        condition: Option<&PointCloud>,
        t: usize,
    ) -> Result<NoiseTensor> {
        self.denoise(noisy, condition, t)
    }
}
