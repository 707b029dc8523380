use framewise_core::attention::AttentionMode;
use framewise_core::director::{FramePromptSet, MockChatClient};
use framewise_core::eval::{mean_adjacent_l2, temporal_consistency};
use framewise_core::pipeline::{generate_video, PipelineConfig, PromptSource};

fn config(mode: AttentionMode, frames: usize) -> PipelineConfig {
    // Small schedule and batch so several sections run quickly.
    let mut config = PipelineConfig {
        frames,
        seed: 7,
        steps: 20,
        mapping_steps: 16,
        batch: 4,
        ..PipelineConfig::default()
    };
    config.attention = config.attention.with_mode(mode);
    config
}

fn prompts(frames: usize) -> FramePromptSet {
    let prompts = (1..=frames)
        .map(|k| format!("a corgi running along the beach, step {k}"))
        .collect();
    FramePromptSet::new("a corgi running on the beach", 4, prompts).unwrap()
}

#[test]
fn value_mapping_reduces_frame_to_frame_change() {
    // One section: at this short schedule, section boundaries add jumps of
    // their own because each section rotates over a different context.
    let run = |mode| {
        let cfg = PipelineConfig {
            batch: 8,
            ..config(mode, 8)
        };
        generate_video(PromptSource::Prompts(prompts(8)), &cfg, &MockChatClient)
            .unwrap()
            .latents
    };
    let own = run(AttentionMode::PerFrame);
    let rvm = run(AttentionMode::Rvm);
    assert!(mean_adjacent_l2(&rvm).unwrap() < mean_adjacent_l2(&own).unwrap());
    assert!(temporal_consistency(&rvm).unwrap() < temporal_consistency(&own).unwrap());
}

#[test]
fn runs_are_deterministic() {
    let cfg = config(AttentionMode::RvmDsf, 8);
    let a = generate_video(
        PromptSource::UserPrompt("a kite over a hill".into()),
        &cfg,
        &MockChatClient,
    )
    .unwrap();
    let b = generate_video(
        PromptSource::UserPrompt("a kite over a hill".into()),
        &cfg,
        &MockChatClient,
    )
    .unwrap();
    assert_eq!(a.latents.data, b.latents.data);
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.prompts, b.prompts);
}

#[test]
fn cached_frames_match_a_short_run() {
    let long = generate_video(
        PromptSource::Prompts(prompts(7)),
        &config(AttentionMode::RvmDsf, 7),
        &MockChatClient,
    )
    .unwrap();
    let short = generate_video(
        PromptSource::Prompts(prompts(7).truncated(2).unwrap()),
        &config(AttentionMode::RvmDsf, 2),
        &MockChatClient,
    )
    .unwrap();
    // Sections [1,2], [3,4], [5,6], [7] with two cached frames each.
    assert_eq!(long.sections.len(), 4);
    for f in 0..2 {
        let a = long.latents.data.index_axis(ndarray::Axis(0), f);
        let b = short.latents.data.index_axis(ndarray::Axis(0), f);
        assert!(
            a.iter()
                .zip(b.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            "frame {}",
            f + 1
        );
    }
    let stats = long.cache;
    assert!(stats.writes > 0 && stats.hits > 0);
    assert_eq!(stats.misses, 0);
    assert_eq!(
        stats.writes, stats.hits,
        "every cached entry is read exactly once"
    );
}

#[test]
fn rotational_modes_need_a_store_only_across_sections() {
    let mut cfg = config(AttentionMode::Rvm, 4);
    cfg.batch = 8;
    let video = generate_video(PromptSource::Prompts(prompts(4)), &cfg, &MockChatClient).unwrap();
    assert_eq!(video.sections.len(), 1);
    assert_eq!(video.cache.writes, 0);
}

#[test]
fn motion_translates_the_video() {
    let still = config(AttentionMode::Rvm, 3);
    let moving = PipelineConfig {
        motion: Some((1, 0)),
        ..still.clone()
    };
    let a = generate_video(PromptSource::Prompts(prompts(3)), &still, &MockChatClient).unwrap();
    let b = generate_video(PromptSource::Prompts(prompts(3)), &moving, &MockChatClient).unwrap();
    assert_ne!(a.latents.data, b.latents.data);
    let bad = PipelineConfig {
        motion: Some((16, 0)),
        ..still
    };
    assert!(generate_video(PromptSource::Prompts(prompts(3)), &bad, &MockChatClient).is_err());
}

#[test]
fn a_single_frame_ignores_the_attention_mode() {
    let runs: Vec<_> = AttentionMode::ALL
        .into_iter()
        .map(|mode| {
            generate_video(
                PromptSource::Prompts(prompts(1)),
                &config(mode, 1),
                &MockChatClient,
            )
            .unwrap()
            .latents
            .data
        })
        .collect();
    for run in &runs[1..] {
        let diff = run
            .iter()
            .zip(runs[0].iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-6, "{diff}");
    }
}
