//! Unit-level connectivity of a masked network.
//!
//! Units are input features and hidden neurons for MLPs, channels for the
//! convolutional families. Two units are connected if any kept weight links
//! them; identity shortcuts count as always-kept edges.

use serde::Serialize;

use super::MaskSet;
use crate::error::Result;
use crate::model::arch::Layer;
use crate::model::{Family, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GroupKind {
    Input,
    Hidden,
    Output,
    /// Residual merge point; not a unit of its own.
    Junction,
}

struct Group {
    name: String,
    size: usize,
    kind: GroupKind,
}

enum Adjacency {
    /// Row-major `from × to` kept-edge matrix.
    Dense(Vec<bool>),
    Identity,
}

struct Edges {
    from: usize,
    to: usize,
    adj: Adjacency,
}

/// Degree statistics for one hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerConnectivity {
    pub name: String,
    pub units: usize,
    pub in_degree: Vec<u32>,
    pub out_degree: Vec<u32>,
    /// Units with zero in-degree or zero out-degree.
    pub dead_units: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConnectivityReport {
    pub layers: Vec<LayerConnectivity>,
    pub hidden_units: usize,
    pub dead_units: usize,
    pub dead_fraction: f64,
    pub reachable_outputs: usize,
    pub outputs: usize,
    /// Every class output is reachable from the inputs along kept edges.
    pub is_connected: bool,
}

struct Builder<'a> {
    model: &'a Model,
    masks: &'a MaskSet,
    groups: Vec<Group>,
    edges: Vec<Edges>,
}

/// Current position while walking the layer plan: the unit group holding the
/// activation and how many features each unit spans (spatial positions).
#[derive(Clone, Copy)]
struct Cursor {
    group: usize,
    h: usize,
    w: usize,
}

impl Builder<'_> {
    fn mask_of(&self, param: usize) -> &[f32] {
        let name = &self.model.param_specs()[param].name;
        self.masks
            .get(name)
            .expect("mask set checked against model")
            .data()
    }

    fn group(&mut self, name: &str, size: usize, kind: GroupKind) -> usize {
        self.groups.push(Group {
            name: name.to_string(),
            size,
            kind,
        });
        self.groups.len() - 1
    }

    fn layer_name(&self, param: usize) -> String {
        let n = &self.model.param_specs()[param].name;
        n.strip_suffix(".weight").unwrap_or(n).to_string()
    }

    fn walk(&mut self, layers: &[Layer], mut cur: Cursor) -> Cursor {
        for layer in layers {
            cur = match layer {
                Layer::Linear { weight, .. } => {
                    let shape = &self.model.param_specs()[*weight].shape;
                    let (d_in, d_out) = (shape[0], shape[1]);
                    let from_size = self.groups[cur.group].size;
                    let span = d_in / from_size;
                    let mask = self.mask_of(*weight);
                    let mut adj = vec![false; from_size * d_out];
                    for u in 0..from_size {
                        for j in 0..span {
                            let row = &mask[(u * span + j) * d_out..(u * span + j + 1) * d_out];
                            for (o, &m) in row.iter().enumerate() {
                                if m != 0.0 {
                                    adj[u * d_out + o] = true;
                                }
                            }
                        }
                    }
                    let name = self.layer_name(*weight);
                    let to = self.group(&name, d_out, GroupKind::Hidden);
                    self.edges.push(Edges {
                        from: cur.group,
                        to,
                        adj: Adjacency::Dense(adj),
                    });
                    Cursor { group: to, h: 1, w: 1 }
                }
                Layer::Conv {
                    weight, stride, pad, ..
                } => {
                    let shape = &self.model.param_specs()[*weight].shape;
                    let (f, c, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
                    let mask = self.mask_of(*weight);
                    let mut adj = vec![false; c * f];
                    for fo in 0..f {
                        for ci in 0..c {
                            let off = (fo * c + ci) * kh * kw;
                            if mask[off..off + kh * kw].iter().any(|&m| m != 0.0) {
                                adj[ci * f + fo] = true;
                            }
                        }
                    }
                    let name = self.layer_name(*weight);
                    let to = self.group(&name, f, GroupKind::Hidden);
                    self.edges.push(Edges {
                        from: cur.group,
                        to,
                        adj: Adjacency::Dense(adj),
                    });
                    Cursor {
                        group: to,
                        h: (cur.h + 2 * pad - kh) / stride + 1,
                        w: (cur.w + 2 * pad - kw) / stride + 1,
                    }
                }
                Layer::MaxPool => Cursor {
                    h: cur.h / 2,
                    w: cur.w / 2,
                    ..cur
                },
                Layer::GlobalAvgPool => Cursor { h: 1, w: 1, ..cur },
                Layer::BatchNorm { .. } | Layer::Relu | Layer::Flatten => cur,
                Layer::Residual { body, shortcut } => {
                    let main = self.walk(body, cur);
                    let skip = self.walk(shortcut, cur);
                    let size = self.groups[main.group].size;
                    let to = self.group("residual", size, GroupKind::Junction);
                    for from in [main.group, skip.group] {
                        self.edges.push(Edges {
                            from,
                            to,
                            adj: Adjacency::Identity,
                        });
                    }
                    Cursor { group: to, ..main }
                }
            };
        }
        cur
    }
}

/// Degrees, dead units, and input-to-output reachability under `masks`.
pub fn connectivity_report(model: &Model, masks: &MaskSet) -> Result<ConnectivityReport> {
    masks.check_matches(model)?;
    let spec = model.spec();
    let mut b = Builder {
        model,
        masks,
        groups: Vec::new(),
        edges: Vec::new(),
    };
    let start = if spec.family == Family::Mlp {
        let g = b.group("input", spec.input_dim(), GroupKind::Input);
        Cursor { group: g, h: 1, w: 1 }
    } else {
        let (c, h, w) = spec.chw()?;
        let g = b.group("input", c, GroupKind::Input);
        Cursor { group: g, h, w }
    };
    let end = b.walk(model.layers(), start);
    b.groups[end.group].kind = GroupKind::Output;
    let Builder { groups, edges, .. } = b;

    let mut in_deg: Vec<Vec<u32>> = groups.iter().map(|g| vec![0; g.size]).collect();
    let mut out_deg: Vec<Vec<u32>> = groups.iter().map(|g| vec![0; g.size]).collect();
    let mut reach: Vec<Vec<bool>> = groups
        .iter()
        .map(|g| vec![g.kind == GroupKind::Input; g.size])
        .collect();

    // Edges are recorded after their source groups exist, so one pass in
    // recording order visits them topologically.
    for e in &edges {
        let (fs, ts) = (groups[e.from].size, groups[e.to].size);
        match &e.adj {
            Adjacency::Identity => {
                for u in 0..fs.min(ts) {
                    out_deg[e.from][u] += 1;
                    in_deg[e.to][u] += 1;
                    if reach[e.from][u] {
                        reach[e.to][u] = true;
                    }
                }
            }
            Adjacency::Dense(adj) => {
                for u in 0..fs {
                    let row = &adj[u * ts..(u + 1) * ts];
                    let src_reached = reach[e.from][u];
                    for (v, &kept) in row.iter().enumerate() {
                        if kept {
                            out_deg[e.from][u] += 1;
                            in_deg[e.to][v] += 1;
                            if src_reached {
                                reach[e.to][v] = true;
                            }
                        }
                    }
                }
            }
        }
    }

    let mut layers = Vec::new();
    let (mut hidden, mut dead) = (0, 0);
    for (i, g) in groups.iter().enumerate() {
        if g.kind != GroupKind::Hidden {
            continue;
        }
        let dead_units = in_deg[i]
            .iter()
            .zip(&out_deg[i])
            .filter(|(&a, &b)| a == 0 || b == 0)
            .count();
        hidden += g.size;
        dead += dead_units;
        layers.push(LayerConnectivity {
            name: g.name.clone(),
            units: g.size,
            in_degree: in_deg[i].clone(),
            out_degree: out_deg[i].clone(),
            dead_units,
        });
    }
    let outputs = groups[end.group].size;
    let reachable_outputs = reach[end.group].iter().filter(|&&r| r).count();
    Ok(ConnectivityReport {
        layers,
        hidden_units: hidden,
        dead_units: dead,
        dead_fraction: if hidden == 0 { 0.0 } else { dead as f64 / hidden as f64 },
        reachable_outputs,
        outputs,
        is_connected: reachable_outputs == outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchSpec};
    use crate::sparsity::generate_static_masks;
    use proptest::prelude::*;

    #[test]
    fn dense_masks_are_connected() {
        for spec in [
            ArchSpec::mlp(&[6], 4, 2, 3),
            ArchSpec::vgg_like(&[1, 8, 8], 2, 11, 3),
            ArchSpec::resnet_like(&[1, 8, 8], 2, 18, 3),
        ] {
            let m = build_model(&spec, 0).unwrap();
            let r = connectivity_report(&m, &MaskSet::dense(&m)).unwrap();
            assert!(r.is_connected, "{spec:?}");
            assert_eq!(r.dead_fraction, 0.0, "{spec:?}");
        }
    }

    #[test]
    fn fully_masked_layer_disconnects() {
        let m = build_model(&ArchSpec::mlp(&[6], 4, 2, 3), 0).unwrap();
        let mut masks = MaskSet::dense(&m);
        masks.masks_mut()[1].data_mut().fill(0.0);
        let r = connectivity_report(&m, &masks).unwrap();
        assert!(!r.is_connected);
        assert_eq!(r.reachable_outputs, 0);
        // fc1 units lose their outputs, fc2 units lose their inputs.
        assert_eq!(r.dead_fraction, 1.0);
    }

    #[test]
    fn identity_skip_keeps_resnet_connected() {
        let m = build_model(&ArchSpec::resnet_like(&[1, 8, 8], 2, 18, 3), 0).unwrap();
        let mut masks = MaskSet::dense(&m);
        // Cut the body of a block whose shortcut is the identity.
        let body = masks.names().iter().position(|n| n == "layer1.0.conv2.weight").unwrap();
        masks.masks_mut()[body].data_mut().fill(0.0);
        assert!(connectivity_report(&m, &masks).unwrap().is_connected);
        // The same cut in plain VGG has no bypass.
        let v = build_model(&ArchSpec::vgg_like(&[1, 8, 8], 2, 11, 3), 0).unwrap();
        let mut vm = MaskSet::dense(&v);
        vm.masks_mut()[3].data_mut().fill(0.0);
        assert!(!connectivity_report(&v, &vm).unwrap().is_connected);
    }

    #[test]
    fn degrees_count_kept_edges() {
        let mut_model = build_model(&ArchSpec::mlp(&[3], 2, 1, 2), 0).unwrap();
        let mut masks = MaskSet::dense(&mut_model);
        // fc1 is 3×2; drop input 0 → unit 1 and input 2 → unit 1.
        masks.masks_mut()[0].data_mut().copy_from_slice(&[1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let r = connectivity_report(&mut_model, &masks).unwrap();
        assert_eq!(r.layers[0].in_degree, vec![3, 1]);
        assert_eq!(r.layers[0].out_degree, vec![2, 2]);
    }

    proptest! {
        #[test]
        fn adding_edges_keeps_connectivity(seed in 0u64..500, keep in 0.05f64..0.6) {
            let m = build_model(&ArchSpec::mlp(&[5], 4, 3, 2), 1).unwrap();
            let sparse = generate_static_masks(&m, keep, seed).unwrap();
            let before = connectivity_report(&m, &sparse).unwrap();
            // Union with a second random mask only adds kept edges.
            let extra = generate_static_masks(&m, keep, seed + 1000).unwrap();
            let merged: Vec<_> = sparse
                .masks()
                .iter()
                .zip(extra.masks())
                .map(|(a, b)| crate::Tensor::from_fn(a.shape(), |i| a.data()[i].max(b.data()[i])))
                .collect();
            let union = MaskSet::new(sparse.names().to_vec(), merged, keep, seed, sparse.schedule()).unwrap();
            let after = connectivity_report(&m, &union).unwrap();
            if before.is_connected {
                prop_assert!(after.is_connected);
            }
            prop_assert!(after.reachable_outputs >= before.reachable_outputs);
        }
    }
}
