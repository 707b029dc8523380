use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{DirectorError, Result};

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("{n} {word}")
    } else {
        format!("{n} {word}s")
    }
}

/// Task instruction asking the model for `frames` numbered image
/// descriptions at `fps`.
pub fn build_task_instruction(user_prompt: &str, frames: usize, fps: u32) -> Result<String> {
    build_task_instruction_with(user_prompt, frames, fps, &[])
}

/// [`build_task_instruction`] with extra attribute-control lines (camera
/// setting, style, ...) appended to the guidelines.
pub fn build_task_instruction_with(
    user_prompt: &str,
    frames: usize,
    fps: u32,
    extra: &[String],
) -> Result<String> {
    if user_prompt.trim().is_empty() {
        return Err(DirectorError::EmptyPrompt);
    }
    if frames == 0 || fps == 0 {
        return Err(DirectorError::InvalidConfig(format!(
            "frames and fps must be at least 1 (got {frames} frames at {fps} fps)"
        )));
    }
    let mut out = format!(
        "You are the director of a short video. Expand the user prompt below into a \
         frame-by-frame plan of {} for a video played at {fps} frames per second.\n\n",
        plural(frames, "image description")
    );
    out.push_str(
        "Guidelines:\n\
         - Keep the narrative continuous: consecutive frames show consecutive moments of one \
         storyline, and events implied by the prompt (arrivals, departures, changes of state) \
         happen at a sensible frame.\n\
         - Describe the actions taking place in each frame.\n\
         - Describe every object consistently across frames (identity, appearance, colors).\n\
         - Give the context: setting, weather, lighting and time of day.\n\
         - State the camera angle and any camera movement.\n\
         - Together, the frames should tell the plot of the prompt from beginning to end.\n\
         - Each description must work on its own as a prompt for an image generator.\n",
    );
    for line in extra.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
        out.push_str("- ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("\nUser prompt:\n\"\"\"\n");
    out.push_str(user_prompt);
    out.push_str("\n\"\"\"\n\n");
    out.push_str(&format!(
        "Output format: exactly {}, numbered from 1 to {frames}, each of the form\n\
         Frame k: <image description>\n\
         Do not write anything else.",
        plural(frames, "line")
    ));
    Ok(out)
}

/// Follow-up instruction that splits every frame of the previous answer in two.
pub fn build_fps_lift_instruction(fps: u32, frames: usize) -> String {
    format!(
        "Now, at a frame rate of {} fps, divide each frame in the previous result into two \
         separate image descriptions. This should eventually result in {} frames.",
        2 * fps as u64,
        2 * frames
    )
}

/// Renders prompts in the `Frame k: ...` line format the parser expects.
pub fn format_frame_prompts(prompts: &[String]) -> String {
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Frame {}: {}", i + 1, p.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn frame_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:(?:[-*+•]|\d+[.)])\s*)?(?:\*\*)?\s*frame\s*#?\s*(\d+)\s*(?:\*\*)?\s*[:\-–—]\s*(?:\*\*)?\s*(.*?)\s*$",
        )
        .expect("valid regex")
    })
}

/// Extracts `Frame k: <text>` lines, ordered by `k`.
///
/// Matching is case-insensitive and tolerates leading list markers (`-`,
/// `*`, `1.`, `2)`) and markdown bold around the label. Lines that do not
/// match are ignored. The frames found must be numbered exactly
/// `1..=expected`.
pub fn parse_frame_prompts(text: &str, expected: usize) -> Result<Vec<String>> {
    if expected == 0 {
        return Err(DirectorError::InvalidConfig(
            "expected frame count must be at least 1".into(),
        ));
    }
    let mut frames = BTreeMap::new();
    for line in text.lines() {
        let Some(caps) = frame_line().captures(line) else {
            continue;
        };
        let body = caps[2].trim_end_matches("**").trim();
        if body.is_empty() {
            continue;
        }
        let k: usize = caps[1]
            .parse()
            .map_err(|_| DirectorError::Format(format!("frame number too large in `{line}`")))?;
        if frames.insert(k, body.to_string()).is_some() {
            return Err(DirectorError::DuplicateFrame(k));
        }
    }
    if frames.is_empty() {
        return Err(DirectorError::Format(
            "no `Frame k: ...` lines found".into(),
        ));
    }
    if frames.len() != expected {
        return Err(DirectorError::CountMismatch {
            found: frames.len(),
            expected,
        });
    }
    if let Some(missing) = (1..=expected).find(|k| !frames.contains_key(k)) {
        return Err(DirectorError::NonContiguous { missing });
    }
    Ok(frames.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_instruction_substitutes_everything() {
        let p = "A corgi is running, and another corgi joins later";
        let text = build_task_instruction(p, 8, 4).unwrap();
        assert!(text.contains(p));
        assert!(text.contains("8 image descriptions"));
        assert!(text.contains("4 frames per second"));
        assert!(text.contains("exactly 8 lines"));
        assert!(text.contains("Frame k: <image description>"));
        assert_eq!(text, build_task_instruction(p, 8, 4).unwrap());
    }

    #[test]
    fn single_frame_instruction() {
        let text = build_task_instruction("a sunrise", 1, 1).unwrap();
        assert!(text.contains("1 image description "));
        assert!(text.contains("exactly 1 line,"));
    }

    #[test]
    fn instruction_errors() {
        assert!(matches!(
            build_task_instruction("   ", 8, 4),
            Err(DirectorError::EmptyPrompt)
        ));
        assert!(build_task_instruction("x", 0, 4).is_err());
        assert!(build_task_instruction("x", 3, 0).is_err());
    }

    #[test]
    fn extra_lines_become_guidelines() {
        let text = build_task_instruction_with(
            "a cat",
            2,
            2,
            &["Use a static camera throughout.".into(), "  ".into()],
        )
        .unwrap();
        assert!(text.contains("- Use a static camera throughout.\n"));
        assert!(!text.contains("- \n"));
    }

    #[test]
    fn lift_instruction_text() {
        assert_eq!(
            build_fps_lift_instruction(4, 8),
            "Now, at a frame rate of 8 fps, divide each frame in the previous result into two \
             separate image descriptions. This should eventually result in 16 frames."
        );
        let one = build_fps_lift_instruction(1, 1);
        assert!(one.contains("2 fps") && one.contains("2 frames"));
    }

    #[test]
    fn parses_plain_lines() {
        let got =
            parse_frame_prompts("Frame 1: A corgi runs.\nFrame 2: Two corgis run.", 2).unwrap();
        assert_eq!(got, vec!["A corgi runs.", "Two corgis run."]);
    }

    #[test]
    fn count_mismatch_reports_both_numbers() {
        let err =
            parse_frame_prompts("Frame 1: A corgi runs.\nFrame 2: Two corgis run.", 3).unwrap_err();
        assert!(matches!(
            err,
            DirectorError::CountMismatch {
                found: 2,
                expected: 3
            }
        ));
    }

    #[test]
    fn tolerant_of_markers_case_and_order() {
        let text = "Sure! Here is the plan:\n\
                    1. Frame 1: x\n\
                    - frame 3 - third\n\
                      * FRAME 2:   second  \n\
                    **Frame 4:** fourth\n\
                    2) Frame #5: fifth\n\
                    Hope this helps.";
        let got = parse_frame_prompts(text, 5).unwrap();
        assert_eq!(got, vec!["x", "second", "third", "fourth", "fifth"]);
    }

    #[test]
    fn rejects_duplicates_gaps_and_garbage() {
        assert!(matches!(
            parse_frame_prompts("Frame 1: a\nFrame 1: b", 2),
            Err(DirectorError::DuplicateFrame(1))
        ));
        assert!(matches!(
            parse_frame_prompts("Frame 1: a\nFrame 3: c", 2),
            Err(DirectorError::NonContiguous { missing: 2 })
        ));
        assert!(matches!(
            parse_frame_prompts("Frame 0: a\nFrame 1: b", 2),
            Err(DirectorError::NonContiguous { missing: 2 })
        ));
        assert!(matches!(
            parse_frame_prompts("no frames here", 2),
            Err(DirectorError::Format(_))
        ));
        // A label without a description does not count as a frame.
        assert!(matches!(
            parse_frame_prompts("Frame 1: a\nFrame 2:   ", 2),
            Err(DirectorError::CountMismatch {
                found: 1,
                expected: 2
            })
        ));
    }

    #[test]
    fn format_and_parse_agree() {
        let prompts: Vec<String> = vec!["a b".into(), "c".into(), "d, e".into()];
        assert_eq!(
            parse_frame_prompts(&format_frame_prompts(&prompts), 3).unwrap(),
            prompts
        );
    }
}
