use proptest::prelude::*;
use storyreel::backends::protocol::*;
use storyreel::config::RunConfig;
use storyreel::dataset::{assemble_manifest, FilterVerdict, TauRecord, TransitionPrompt};
use storyreel::metrics::seam_continuity;
use storyreel::render::{load_run, run_pipeline};
use storyreel::schema::*;
use storyreel::synth::random_plan;
use storyreel::transition::{classify_category, metadata_from_sets, rederive, TransitionCategory};

const POOL: [&str; 6] = ["Ada", "Bram", "Cleo", "Dov", "Eli", "Fen"];

fn set_strategy() -> impl Strategy<Value = CharacterSet> {
    proptest::sample::subsequence(POOL.to_vec(), 0..=POOL.len()).prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transition_sets_partition_the_endpoints(start in set_strategy(), end in set_strategy()) {
        let tau = metadata_from_sets(&start, &end);
        prop_assert!(tau.exiting.is_disjoint(&tau.entering));
        prop_assert!(tau.exiting.is_subset(&start) && tau.entering.is_subset(&end));
        let after: CharacterSet = start.difference(&tau.exiting).chain(&tau.entering).cloned().collect();
        prop_assert_eq!(&after, &end);
        let expected = match (tau.exiting.is_empty(), tau.entering.is_empty()) {
            (true, true) => MovementType::NoChange,
            (true, false) => MovementType::Entry,
            (false, true) => MovementType::Exit,
            (false, false) => MovementType::Combination,
        };
        prop_assert_eq!(tau.movement, expected);
        prop_assert!(rederive(&tau).same_logic(&tau));
        prop_assert_eq!(classify_category(&start, &end).movement(), tau.movement);
    }

    #[test]
    fn transition_metadata_round_trips(start in set_strategy(), end in set_strategy()) {
        let tau = metadata_from_sets(&start, &end);
        let back: TransitionMetadata = serde_json::from_str(&serde_json::to_string(&tau).unwrap()).unwrap();
        prop_assert_eq!(back, tau);
    }

    #[test]
    fn requests_round_trip(id in "[a-z0-9-]{1,24}", seed in any::<u64>(), prompt in ".{0,80}", stage in "[a-z_]{1,12}") {
        for payload in [
            RequestPayload::T2i(T2iPayload { prompt: prompt.clone(), width: 64, height: 32 }),
            RequestPayload::Llm(LlmPayload { stage: stage.clone(), prompt: prompt.clone() }),
        ] {
            let req = BackendRequest::new(id.clone(), seed, payload);
            let back: BackendRequest = serde_json::from_str(&req.to_json()).unwrap();
            prop_assert_eq!(back, req);
        }
        let resp = BackendResponse::ok(&id, ResponsePayload::Text { text: prompt.clone() });
        prop_assert_eq!(serde_json::from_str::<BackendResponse>(&resp.to_json()).unwrap(), resp);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_plans_validate_and_round_trip(seed in any::<u64>(), scenes in 1usize..6, max in 1usize..5) {
        let plan = random_plan(seed, scenes, max);
        let report = validate_plan(&plan, &ValidationOptions::default());
        prop_assert!(report.is_valid(), "{}", report.render());
        let back = parse_plan(&plan.to_json()).unwrap();
        prop_assert_eq!(back, plan);
    }

    #[test]
    fn balanced_manifests_stay_within_one_row(
        sizes in proptest::collection::vec(1usize..40, 5),
        rows in 1usize..400,
        seed in any::<u64>(),
    ) {
        let mut verdicts = Vec::new();
        let mut prompts = Vec::new();
        for (c, n) in TransitionCategory::ALL.into_iter().zip(&sizes) {
            for i in 0..*n {
                let id = format!("{c}-{i:03}");
                let movement = c.movement();
                let tau = TauRecord { category: c, movement, start_count: 1, end_count: 1, staying_count: 1, exiting_count: 0, entering_count: 0 };
                prompts.push(TransitionPrompt { id: id.clone(), ordinal: i as u64, positive: "p".into(), negative: String::new(), target_first: 1, target_last: 1, tau });
                verdicts.push(FilterVerdict { id, counted_first: 1, counted_last: 1, target_first: 1, target_last: 1, pass: true, rationale: String::new(), caption: "c".into() });
            }
        }
        let m = assemble_manifest(&verdicts, &prompts, rows, seed).unwrap();
        prop_assert_eq!(m.rows.len(), rows);
        let counts: Vec<usize> = TransitionCategory::ALL.iter().map(|c| m.histogram.get(c).copied().unwrap_or(0)).collect();
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{:?}", counts);
        prop_assert_eq!(assemble_manifest(&verdicts, &prompts, rows, seed).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn random_renders_stitch_and_stay_continuous(seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { seed, out: dir.path().to_path_buf(), ..RunConfig::default() };
        let plan = random_plan(seed, 2, 3);
        let out = run_pipeline(&plan, &cfg.backends(), &cfg).unwrap();
        let total: usize = out.manifest.clips.iter().map(|c| c.frame_count).sum();
        prop_assert_eq!(out.stitched.frame_count(), total);
        prop_assert_eq!(total, plan.shots.len() * cfg.frames_per_shot as usize);
        let run = load_run(&out.run_dir).unwrap();
        let r = seam_continuity(&run.stitched, cfg.effective_delta_max(), cfg.edge_margin as f64).unwrap();
        prop_assert!(r.ok(), "{:?}", r);
    }
}
