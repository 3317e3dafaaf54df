use proptest::prelude::*;

use shardplan_core::comm::{ring_time, synthetic_profile, AlphaBetaParams, BandwidthProfile, CollectiveKind};
use shardplan_core::cost::{
    memory_breakdown, partition_tensors_greedy, time_params_sharding, total_comm_time, CostConfig,
};
use shardplan_core::domain::{validate_plan, ClusterSpec, DeviceMesh, ModelSpec, ShardingPlan};
use shardplan_core::planner::{enumerate_candidates, solve};
use shardplan_core::sim::{simulate, OverlapTier, SimConfig};

fn kind() -> impl Strategy<Value = CollectiveKind> {
    prop::sample::select(CollectiveKind::ALL.to_vec())
}

fn model_strategy() -> impl Strategy<Value = ModelSpec> {
    (1u32..5, prop::collection::vec(1_000u64..200_000, 1..4), 0u64..500_000, 1u32..4).prop_map(
        |(layers, modules, extra, m)| {
            let layered: u64 = u64::from(layers) * modules.iter().sum::<u64>();
            ModelSpec {
                total_params: layered + extra,
                layer_count: layers,
                module_params: modules,
                hidden: 64,
                seq_len: 128,
                micro_batch: 1,
                micro_batch_count: m,
                vocab: 100,
                bytes_per_param: 2,
                bytes_per_grad: 2,
                bytes_per_os_per_param: 12,
            }
        },
    )
}

fn all_meshes(r: u32, n: u32) -> Vec<DeviceMesh> {
    (1..=r).flat_map(|a| (1..=n).map(move |b| DeviceMesh::new(a, b))).collect()
}

fn ring_profile(r: u32, n: u32, alpha: f64) -> BandwidthProfile {
    synthetic_profile(
        AlphaBetaParams::new(alpha, 150e9),
        AlphaBetaParams::new(alpha * 2.0, 25e9),
        &all_meshes(r, n),
        &[1 << 12, 1 << 16, 1 << 20, 1 << 24, 1 << 28],
    )
}

/// A valid plan for an `r x n` cluster picked by index.
fn plan_strategy() -> impl Strategy<Value = (ClusterSpec, ShardingPlan)> {
    (1u32..=8, 1u32..=4).prop_flat_map(|(r, n)| {
        let cluster = ClusterSpec::new(r, n, 1e12);
        let plans = enumerate_candidates(&cluster);
        (Just(cluster), prop::sample::select(plans))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ring_allreduce_is_reduce_scatter_plus_allgather(
        v in 0.0f64..1e10, p in 1u64..2048, alpha in 0.0f64..1e-4, w in 1e6f64..1e12,
    ) {
        let ab = AlphaBetaParams::new(alpha, w);
        let ar = ring_time(CollectiveKind::AllReduce, v, p, ab);
        let split = ring_time(CollectiveKind::ReduceScatter, v, p, ab) + ring_time(CollectiveKind::AllGather, v, p, ab);
        prop_assert_eq!(ar, split);
    }

    #[test]
    fn collective_time_is_nonnegative_and_zero_only_when_trivial(
        k in kind(), size in 0.0f64..1e10, a in 1u32..=8, b in 1u32..=4,
    ) {
        let profile = ring_profile(8, 4, 1e-6);
        let mesh = DeviceMesh::new(a, b);
        let t = profile.collective_time(k, size, mesh).unwrap();
        prop_assert!(t >= 0.0);
        prop_assert_eq!(t == 0.0, size == 0.0 || mesh.size() == 1);
    }

    #[test]
    fn collective_time_grows_with_size(k in kind(), s1 in 1.0f64..1e9, s2 in 1.0f64..1e9, a in 2u32..=8) {
        let profile = ring_profile(8, 1, 2e-6);
        let mesh = DeviceMesh::new(a, 1);
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(profile.collective_time(k, lo, mesh).unwrap() <= profile.collective_time(k, hi, mesh).unwrap());
    }

    #[test]
    fn interpolation_is_exact_at_points_and_continuous(k in kind(), a in 2u32..=8, idx in 0usize..5) {
        let profile = ring_profile(8, 1, 1e-6);
        let mesh = DeviceMesh::new(a, 1);
        let (size, w) = profile.series(k, mesh).unwrap()[idx];
        prop_assert_eq!(profile.effective_bandwidth(k, size as f64, mesh).unwrap(), w);
        for eps in [1e-6, 1e-9] {
            let below = profile.effective_bandwidth(k, size as f64 * (1.0 - eps), mesh).unwrap();
            let above = profile.effective_bandwidth(k, size as f64 * (1.0 + eps), mesh).unwrap();
            prop_assert!((below - w).abs() <= w * eps * 10.0);
            prop_assert!((above - w).abs() <= w * eps * 10.0);
        }
    }

    #[test]
    fn validation_is_pure_and_candidates_validate((cluster, plan) in plan_strategy()) {
        prop_assert!(validate_plan(&plan, &cluster).is_empty());
        prop_assert_eq!(validate_plan(&plan, &cluster), validate_plan(&plan, &cluster));
    }

    #[test]
    fn sharding_more_never_costs_memory((cluster, plan) in plan_strategy(), model in model_strategy()) {
        let cfg = CostConfig::default();
        let base = memory_breakdown(&model, &plan, &cfg);
        for other in enumerate_candidates(&cluster) {
            let coarser = other.p == plan.p && other.g == plan.g && other.s_os() >= plan.s_os();
            if coarser {
                prop_assert!(memory_breakdown(&model, &other, &cfg).d_modelstate <= base.d_modelstate);
            }
        }
        prop_assert_eq!(base.d_modelstate, base.d_params + base.d_grads + base.d_os);
        prop_assert_eq!(base.d_total, base.d_modelstate + base.d_activation + base.d_tmp);
    }

    #[test]
    fn full_sharding_divides_replica_memory(r in 1u32..=8, n in 1u32..=16, model in model_strategy()) {
        let cfg = CostConfig::default();
        let dp = DeviceMesh::new(r, n);
        let replica = memory_breakdown(&model, &ShardingPlan::full_replica(), &cfg).d_modelstate;
        let sharded = memory_breakdown(&model, &ShardingPlan::full_sharding(dp), &cfg).d_modelstate;
        let expected = replica / dp.size() as f64;
        if dp.size().is_power_of_two() {
            prop_assert_eq!(sharded, expected);
        } else {
            prop_assert!((sharded - expected).abs() <= expected * 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn total_is_the_sum_of_its_terms((cluster, plan) in plan_strategy(), model in model_strategy()) {
        let profile = ring_profile(8, 4, 1e-6);
        let t = total_comm_time(&model, &cluster, &plan, &profile, &CostConfig { bucket_size: 1e5, ..CostConfig::default() }).unwrap();
        prop_assert_eq!(t.total, t.t_p + t.t_g + t.t_os_allreduce + t.t_os_broadcast);
        prop_assert!(t.t_p >= 0.0 && t.t_g >= 0.0 && t.t_os_allreduce >= 0.0 && t.t_os_broadcast >= 0.0);
    }

    #[test]
    fn params_time_is_linear_in_micro_batches_and_layers(model in model_strategy(), k in 2u32..5) {
        let profile = BandwidthProfile::constant(1e11, &all_meshes(8, 2));
        let plan = ShardingPlan::full_sharding(DeviceMesh::new(8, 2));
        let base = time_params_sharding(&model, &plan, &profile).unwrap();
        let more_mb = ModelSpec { micro_batch_count: model.micro_batch_count * k, ..model.clone() };
        let more_layers = ModelSpec {
            layer_count: model.layer_count * k,
            total_params: model.total_params + model.layer_params() * u64::from(k - 1),
            ..model.clone()
        };
        let scale = f64::from(k);
        prop_assert!((time_params_sharding(&more_mb, &plan, &profile).unwrap() - scale * base).abs() <= 1e-12 * scale * base);
        prop_assert!((time_params_sharding(&more_layers, &plan, &profile).unwrap() - scale * base).abs() <= 1e-12 * scale * base);
    }

    #[test]
    fn greedy_partition_conserves_bytes(sizes in prop::collection::vec(1u64..1_000_000, 0..40), k in 1usize..9) {
        let p = partition_tensors_greedy(&sizes, k);
        prop_assert_eq!(p.shard_sizes.iter().sum::<u64>(), sizes.iter().sum::<u64>());
        prop_assert_eq!(p.assignment.len(), sizes.len());
        let mut recomputed = vec![0u64; k];
        for (i, &s) in p.assignment.iter().enumerate() {
            prop_assert!(s < k);
            recomputed[s] += sizes[i];
        }
        prop_assert_eq!(recomputed, p.shard_sizes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solver_is_deterministic_and_valid(r in 1u32..=4, n in 1u32..=4, model in model_strategy(), cap in 1e6f64..1e8) {
        let cluster = ClusterSpec::new(r, n, cap);
        let profile = ring_profile(4, 4, 1e-6);
        let cfg = CostConfig { bucket_size: 1e5, ..CostConfig::default() };
        let a = solve(&model, &cluster, &profile, &cfg, true);
        let b = solve(&model, &cluster, &profile, &cfg, true);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert!(validate_plan(&a.best.plan, &cluster).is_empty());
                prop_assert!(a.best.memory.d_total <= cap);
                prop_assert_eq!(a, b);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "solve is not deterministic"),
        }
    }

    #[test]
    fn simulated_step_respects_bounds_and_tiers(
        (cluster, plan) in plan_strategy(), model in model_strategy(), recompute in any::<bool>(), streams in 1u32..=2,
    ) {
        let profile = ring_profile(8, 4, 1e-6);
        let cost_cfg = CostConfig { bucket_size: 2e5, ..CostConfig::default() };
        let mut previous = f64::INFINITY;
        for tier in OverlapTier::ALL {
            let cfg = SimConfig { overlap_tier: tier, recompute, comm_streams: streams, ..SimConfig::default() };
            let (graph, timeline) = simulate(&model, &cluster, &plan, &profile, &cost_cfg, &cfg).unwrap();
            let lower = graph.stream_durations().into_iter().fold(0.0, f64::max);
            let upper = graph.total_duration();
            let slack = 1e-9 * upper;
            prop_assert!(timeline.step_time + slack >= lower);
            prop_assert!(timeline.step_time <= upper + slack);
            prop_assert!(timeline.step_time <= previous + slack, "{:?} slower than the tier below", tier);
            if tier == OverlapTier::None {
                let comm = total_comm_time(&model, &cluster, &plan, &profile, &cost_cfg).unwrap();
                let expected = graph.compute_duration() + comm.total;
                prop_assert!((timeline.step_time - expected).abs() <= 1e-9 * expected);
            }
            previous = timeline.step_time;
        }
    }
}
