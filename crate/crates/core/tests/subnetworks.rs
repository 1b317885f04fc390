use sparse_ticket::data::{gen_synthetic, Dataset, SyntheticKind, SyntheticSpec};
use sparse_ticket::mask::{random_mask, SparsityPlan};
use sparse_ticket::network::{build_network, init_params, predict, LayerSpec, Network, PrunePolicy};
use sparse_ticket::optim::{ExtrusionConfig, LambdaParams};
use sparse_ticket::strategies::{strategy_rst, strategy_scratch, CellSeeds, RstConfig, SubnetworkCandidate};

fn blobs() -> (Dataset, Dataset) {
    gen_synthetic(&SyntheticSpec {
        kind: SyntheticKind::Blobs,
        n_per_class: 40,
        classes: 3,
        noise: 1.0,
        dim: 4,
        seed: 11,
    })
    .unwrap()
}

fn cnn() -> Network {
    build_network(
        &[1, 8, 8],
        &[
            LayerSpec::Conv2d { in_channels: 1, out_channels: 4, kernel: 4, stride: 2, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 64, outputs: 16 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 16, outputs: 3 },
        ],
        PrunePolicy::All,
    )
    .unwrap()
}

fn mlp() -> Network {
    build_network(
        &[4],
        &[
            LayerSpec::Dense { inputs: 4, outputs: 16 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 16, outputs: 16 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 16, outputs: 3 },
        ],
        PrunePolicy::Default,
    )
    .unwrap()
}

fn rst_config(v_s: u64) -> RstConfig {
    RstConfig {
        lambda: LambdaParams { lambda0: 0.0, eta: 0.05, lambda_b: 1.0, v_eta: 1, v_s },
        extrusion: ExtrusionConfig { lr: 1e-2, batch_size: 16, momentum: 0.9, trace_every: 10 },
    }
}

#[test]
fn masked_forward_equals_forward_on_zeroed_weights() {
    let net = cnn();
    let params = init_params(&net, 3);
    let mask = random_mask(&net, &SparsityPlan::global(0.7).unwrap(), 9).unwrap();
    let mut zeroed = params.clone();
    mask.apply(&mut zeroed).unwrap();
    let x = sparse_ticket::Tensor::new(
        vec![2, 1, 8, 8],
        (0..128).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect(),
    )
    .unwrap();
    let a = predict(&net, &params, Some(&mask), x.clone()).unwrap();
    let b = predict(&net, &zeroed, None, x).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() <= 1e-12, "{u} vs {v}");
    }
}

#[test]
fn scratch_and_rst_share_the_mask_for_a_seed() {
    let net = mlp();
    let (train, _) = blobs();
    let seeds = CellSeeds::new(4);
    let init = init_params(&net, seeds.init);
    let plan = SparsityPlan::global(0.9).unwrap();
    let scratch = strategy_scratch(&net, &init, &plan, seeds.mask).unwrap();
    let rst = strategy_rst(&net, &init, &plan, seeds.mask, &rst_config(20), &train, seeds.extrusion).unwrap();
    assert_eq!(scratch.mask.checksum(), rst.mask.checksum());
    assert_eq!(scratch.provenance.init_checksum, rst.provenance.init_checksum);
    assert!(rst.mask.zeros_hold(&rst.weights));
    assert_ne!(scratch.weights.checksum(), rst.weights.checksum());
}

#[test]
fn degenerate_schedule_reduces_rst_to_scratch() {
    let net = mlp();
    let (train, _) = blobs();
    let init = init_params(&net, 8);
    let plan = SparsityPlan::global(0.5).unwrap();
    let mut cfg = rst_config(0);
    cfg.lambda.lambda_b = 0.0;
    let scratch = strategy_scratch(&net, &init, &plan, 2).unwrap();
    let rst = strategy_rst(&net, &init, &plan, 2, &cfg, &train, 1).unwrap();
    assert_eq!(scratch.weights.checksum(), rst.weights.checksum());
    assert_eq!(rst.provenance.cost_epochs, 0.0);
}

#[test]
fn candidate_survives_a_file_round_trip() {
    let net = mlp();
    let (train, _) = blobs();
    let init = init_params(&net, 1);
    let plan = SparsityPlan::global(0.7).unwrap();
    let cand = strategy_rst(&net, &init, &plan, 6, &rst_config(5), &train, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rst.candidate");
    cand.save(&path).unwrap();
    let back = SubnetworkCandidate::load(&path).unwrap();
    assert_eq!(back.mask, cand.mask);
    assert_eq!(back.weights.checksum(), cand.weights.checksum());
    assert_eq!(back.weights.init_checksum(), cand.weights.init_checksum());
    assert_eq!(back.provenance, cand.provenance);
}

#[test]
fn truncated_candidate_is_rejected() {
    let net = mlp();
    let init = init_params(&net, 1);
    let cand = strategy_scratch(&net, &init, &SparsityPlan::global(0.5).unwrap(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c");
    cand.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(SubnetworkCandidate::load(&path).is_err());
}
