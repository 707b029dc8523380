use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};

/// One sampling pass: new frames plus the cached frames they attend to.
/// Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub frames: Range<usize>,
    pub cached: Range<usize>,
}

/// Splits `frames` into sampling passes for a batch of `batch` frames.
///
/// A video that fits in one batch is a single section. Otherwise the first
/// section holds `batch / 2` frames, and every later section pairs the
/// `batch / 2` frames just before it (read from the cache) with up to
/// `batch - batch / 2` new frames.
pub fn plan_sections(frames: usize, batch: usize) -> Result<Vec<Section>> {
    if batch < 2 {
        return Err(PipelineError::Config(format!(
            "batch size must be at least 2, got {batch}"
        )));
    }
    if frames == 0 {
        return Err(PipelineError::Config("no frames to plan".into()));
    }
    if frames <= batch {
        return Ok(vec![Section {
            frames: 0..frames,
            cached: 0..0,
        }]);
    }
    let half = batch / 2;
    let fresh = batch - half;
    let mut sections = vec![Section {
        frames: 0..half,
        cached: 0..0,
    }];
    let mut start = half;
    while start < frames {
        let end = (start + fresh).min(frames);
        sections.push(Section {
            frames: start..end,
            cached: start - half..start,
        });
        start = end;
    }
    Ok(sections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_based(sections: &[Section]) -> Vec<Vec<usize>> {
        sections
            .iter()
            .map(|s| s.frames.clone().map(|f| f + 1).collect())
            .collect()
    }

    #[test]
    fn examples() {
        assert_eq!(
            one_based(&plan_sections(8, 8).unwrap()),
            vec![(1..=8).collect::<Vec<_>>()]
        );
        let twelve = plan_sections(12, 8).unwrap();
        assert_eq!(
            one_based(&twelve),
            vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8], vec![9, 10, 11, 12]]
        );
        assert_eq!(twelve[1].cached, 0..4);
        assert_eq!(twelve[2].cached, 4..8);
        assert_eq!(one_based(&plan_sections(1, 8).unwrap()), vec![vec![1]]);
    }

    #[test]
    fn odd_batches_use_the_ceiling_for_new_frames() {
        let s = plan_sections(6, 5).unwrap();
        assert_eq!(one_based(&s), vec![vec![1, 2], vec![3, 4, 5], vec![6]]);
        assert_eq!(s[1].cached, 0..2);
        assert_eq!(s[2].cached, 3..5);
    }

    #[test]
    fn rejects_small_batches() {
        assert!(plan_sections(4, 1).is_err());
        assert!(plan_sections(0, 4).is_err());
    }

    proptest! {
        #[test]
        fn sections_partition_frames(frames in 1usize..200, batch in 2usize..33) {
            let sections = plan_sections(frames, batch).unwrap();
            let covered: Vec<usize> = sections.iter().flat_map(|s| s.frames.clone()).collect();
            prop_assert_eq!(covered, (0..frames).collect::<Vec<_>>());
            for s in &sections {
                prop_assert!(!s.frames.is_empty());
                prop_assert!(s.cached.len() + s.frames.len() <= batch);
                prop_assert!(s.cached.end <= s.frames.start);
            }
        }
    }
}
