//! Longest contiguous overlap between a sequence and a sample set, via a
//! suffix automaton over the samples joined with unique separators.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchLocation {
    pub seq_offset: usize,
    pub sample: usize,
    pub sample_offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<MatchLocation>,
}

#[derive(Clone, Debug)]
struct State {
    len: usize,
    link: Option<usize>,
    next: HashMap<u64, usize>,
    first_end: usize,
}

#[derive(Clone, Debug)]
pub struct OverlapIndex {
    states: Vec<State>,
    starts: Vec<usize>,
}

impl OverlapIndex {
    pub fn new<S: AsRef<[TokenId]>>(samples: &[S]) -> Self {
        let mut sam = Self {
            states: vec![State { len: 0, link: None, next: HashMap::new(), first_end: 0 }],
            starts: Vec::with_capacity(samples.len()),
        };
        let mut last = 0;
        let mut pos = 0;
        for (i, s) in samples.iter().enumerate() {
            sam.starts.push(pos);
            for &t in s.as_ref() {
                last = sam.extend(last, t as u64, pos);
                pos += 1;
            }
            last = sam.extend(last, u64::MAX - i as u64, pos);
            pos += 1;
        }
        sam
    }

    fn extend(&mut self, last: usize, c: u64, pos: usize) -> usize {
        let cur = self.states.len();
        self.states.push(State { len: self.states[last].len + 1, link: None, next: HashMap::new(), first_end: pos });
        let mut p = Some(last);
        while let Some(pi) = p {
            if self.states[pi].next.contains_key(&c) {
                break;
            }
            self.states[pi].next.insert(c, cur);
            p = self.states[pi].link;
        }
        match p {
            None => self.states[cur].link = Some(0),
            Some(pi) => {
                let q = self.states[pi].next[&c];
                if self.states[pi].len + 1 == self.states[q].len {
                    self.states[cur].link = Some(q);
                } else {
                    let clone = self.states.len();
                    let mut st = self.states[q].clone();
                    st.len = self.states[pi].len + 1;
                    self.states.push(st);
                    let mut p2 = Some(pi);
                    while let Some(x) = p2 {
                        if self.states[x].next.get(&c) != Some(&q) {
                            break;
                        }
                        self.states[x].next.insert(c, clone);
                        p2 = self.states[x].link;
                    }
                    self.states[q].link = Some(clone);
                    self.states[cur].link = Some(clone);
                }
            }
        }
        cur
    }

    pub fn longest_overlap(&self, seq: &[TokenId]) -> Overlap {
        let (mut v, mut l) = (0usize, 0usize);
        let (mut best, mut best_state, mut best_end) = (0usize, 0usize, 0usize);
        for (i, &t) in seq.iter().enumerate() {
            let c = t as u64;
            while v != 0 && !self.states[v].next.contains_key(&c) {
                v = self.states[v].link.unwrap_or(0);
                l = self.states[v].len;
            }
            if let Some(&nx) = self.states[v].next.get(&c) {
                v = nx;
                l += 1;
            } else {
                v = 0;
                l = 0;
            }
            if l > best {
                (best, best_state, best_end) = (l, v, i);
            }
        }
        if best == 0 {
            return Overlap { length: 0, location: None };
        }
        let start = self.states[best_state].first_end + 1 - best;
        let sample = self.starts.partition_point(|&s| s <= start) - 1;
        Overlap {
            length: best,
            location: Some(MatchLocation {
                seq_offset: best_end + 1 - best,
                sample,
                sample_offset: start - self.starts[sample],
            }),
        }
    }
}
