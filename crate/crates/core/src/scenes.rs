//! Standard synthetic scenes and the simulate → reconstruct pipeline used by
//! the command line and the acceptance experiments.

use crate::error::Result;
use crate::event_model::EventStream;
use crate::event_sim::{
    render_stereo_sequence, simulate_events, Plane, Rect, SceneConfig, SimulatorConfig,
    StereoSequence,
};
use crate::imageops::Image;
use crate::reconstruct::{integrate_events, ReconstructionConfig};

/// One fronto-parallel textured plane filling the frame at disparity 6.
pub fn single_plane() -> SceneConfig {
    SceneConfig::default()
}

/// Background at disparity 2 with a nearer rectangle at disparity 10.
pub fn two_plane() -> SceneConfig {
    SceneConfig {
        planes: vec![
            Plane {
                disparity: 2.0,
                region: Rect::full(64, 64),
            },
            Plane {
                disparity: 10.0,
                region: Rect {
                    x: 20,
                    y: 16,
                    width: 24,
                    height: 32,
                },
            },
        ],
        seed: 11,
        ..SceneConfig::default()
    }
}

/// Background at disparity 4 with a small box at disparity 7.
pub fn box_scene() -> SceneConfig {
    SceneConfig {
        planes: vec![
            Plane {
                disparity: 4.0,
                region: Rect::full(64, 64),
            },
            Plane {
                disparity: 7.0,
                region: Rect {
                    x: 30,
                    y: 8,
                    width: 18,
                    height: 18,
                },
            },
        ],
        seed: 23,
        ..SceneConfig::default()
    }
}

pub fn standard_scenes() -> Vec<(&'static str, SceneConfig)> {
    vec![
        ("single_plane", single_plane()),
        ("two_plane", two_plane()),
        ("box", box_scene()),
    ]
}

/// A simulated pair: the last intensity frame of the left camera and the
/// event-based reconstruction of the right camera at the same instant.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub sequence: StereoSequence,
    pub events_left: EventStream,
    pub events_right: EventStream,
    pub left: Image,
    pub right: Image,
}

pub fn simulate_pair(
    scene: &SceneConfig,
    sim: &SimulatorConfig,
    recon: &ReconstructionConfig,
) -> Result<ScenePair> {
    let sequence = render_stereo_sequence(scene)?;
    let events_left = simulate_events(&sequence.left_frames, &sequence.timestamps, sim)?;
    let events_right = simulate_events(&sequence.right_frames, &sequence.timestamps, sim)?;
    let t_last = *sequence.timestamps.last().expect("at least two frames");
    let recon = match recon.window {
        Some(_) => *recon,
        None => recon.window_ending_at(t_last),
    };
    let right = integrate_events(&events_right, &recon)?;
    let left = sequence
        .left_frames
        .last()
        .expect("at least two frames")
        .clone();
    Ok(ScenePair {
        sequence,
        events_left,
        events_right,
        left,
        right,
    })
}
