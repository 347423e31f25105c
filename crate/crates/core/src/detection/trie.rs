use std::collections::HashMap;
use std::ops::Range;

/// Word-level multi-pattern trie for blacklist terms. Terms match only on
/// whole words, case-insensitively; a term may span several words.
#[derive(Debug, Clone, Default)]
pub struct BlacklistTrie {
    nodes: Vec<TrieNode>,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    next: HashMap<String, usize>,
    /// Index of the rule whose term ends here.
    terminal: Option<usize>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '_'
}

/// Byte ranges of the words in `text`.
pub(crate) fn words(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (is_word_char(c), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..text.len());
    }
    out
}

impl BlacklistTrie {
    pub fn new() -> Self {
        Self {
            nodes: vec![TrieNode::default()],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Add `term` for `rule`. Returns false if the term has no words.
    pub fn insert(&mut self, term: &str, rule: usize) -> bool {
        if self.nodes.is_empty() {
            self.nodes.push(TrieNode::default());
        }
        let ws = words(term);
        if ws.is_empty() {
            return false;
        }
        let mut cur = 0;
        for w in ws {
            let key = term[w].to_lowercase();
            cur = match self.nodes[cur].next.get(&key) {
                Some(&n) => n,
                None => {
                    self.nodes.push(TrieNode::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[cur].next.insert(key, n);
                    n
                }
            };
        }
        self.nodes[cur].terminal.get_or_insert(rule);
        true
    }

    /// All (rule, byte range) matches, every start word tried.
    pub fn find_all(&self, text: &str) -> Vec<(usize, Range<usize>)> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let ws = words(text);
        let lowered: Vec<String> = ws.iter().map(|w| text[w.clone()].to_lowercase()).collect();
        for i in 0..ws.len() {
            let mut cur = 0;
            for j in i..ws.len() {
                match self.nodes[cur].next.get(&lowered[j]) {
                    Some(&n) => cur = n,
                    None => break,
                }
                if let Some(rule) = self.nodes[cur].terminal {
                    out.push((rule, ws[i].start..ws[j].end));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_word_only() {
        let mut t = BlacklistTrie::new();
        t.insert("PROJECT-ORION", 0);
        t.insert("blue falcon", 1);
        assert_eq!(t.find_all("ref project-orion, please").len(), 1);
        assert!(t.find_all("xproject-orion").is_empty());
        assert!(t.find_all("project-orionx").is_empty());
        let m = t.find_all("the Blue  Falcon plan");
        assert_eq!(m, vec![(1, 4..16)]);
        assert!(t.find_all("blue").is_empty());
    }

    #[test]
    fn word_split() {
        assert_eq!(words("a bc,d-e"), vec![0..1, 2..4, 5..8]);
        assert!(words(" ,. ").is_empty());
    }
}
