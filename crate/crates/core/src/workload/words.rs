use rand::Rng;

/// Filler vocabulary for synthetic prompts. Lowercase letters only, so no
/// shipped Tier-1 rule can fire on filler text.
pub(crate) const WORDS: &[&str] = &[
    "about", "above", "across", "action", "actually", "advice", "after", "again", "against",
    "almost", "along", "already", "also", "always", "among", "answer", "anyone", "appear",
    "apply", "argue", "around", "article", "ask", "avoid", "away", "balance", "basic", "become",
    "before", "begin", "behind", "believe", "below", "better", "between", "beyond", "bring",
    "build", "call", "campaign", "capital", "careful", "carry", "case", "center", "certain",
    "change", "chapter", "check", "choose", "clear", "close", "common", "compare", "complete",
    "concept", "consider", "continue", "control", "correct", "could", "country", "course",
    "create", "current", "data", "decide", "define", "describe", "design", "detail", "develop",
    "differ", "direct", "discuss", "draft", "during", "early", "easy", "effect", "either",
    "email", "enough", "entire", "error", "even", "event", "every", "example", "explain",
    "factor", "field", "figure", "final", "find", "first", "follow", "format", "forward",
    "friend", "function", "general", "given", "good", "great", "group", "guide", "handle",
    "happen", "help", "history", "however", "idea", "image", "improve", "include", "inside",
    "instead", "issue", "item", "keep", "kind", "know", "language", "large", "later", "learn",
    "least", "letter", "level", "likely", "limit", "list", "little", "local", "long", "make",
    "manage", "matter", "maybe", "measure", "method", "might", "model", "moment", "more",
    "most", "move", "much", "music", "must", "name", "nature", "near", "need", "never", "next",
    "note", "number", "offer", "often", "open", "option", "order", "other", "outline", "over",
    "paper", "part", "pattern", "people", "perhaps", "person", "place", "plan", "please",
    "point", "policy", "possible", "prepare", "present", "problem", "process", "produce",
    "program", "provide", "purpose", "question", "quick", "rather", "reach", "read", "ready",
    "reason", "recent", "record", "reduce", "region", "remain", "report", "require", "result",
    "return", "review", "right", "rule", "same", "school", "section", "seem", "send", "series",
    "serve", "several", "share", "short", "should", "show", "similar", "simple", "since",
    "small", "social", "some", "sort", "source", "space", "special", "start", "state", "step",
    "still", "story", "strong", "study", "style", "subject", "summary", "support", "sure",
    "system", "table", "take", "task", "team", "tell", "term", "test", "text", "than", "thank",
    "that", "their", "then", "theory", "there", "these", "thing", "think", "those", "though",
    "through", "time", "today", "together", "topic", "toward", "travel", "true", "turn",
    "under", "until", "update", "useful", "usual", "value", "various", "version", "very",
    "view", "visit", "wait", "want", "water", "week", "well", "what", "where", "whether",
    "which", "while", "whole", "why", "within", "without", "word", "work", "world", "would",
    "write", "year", "young",
];

/// Append filler words to `out` until it grows by at least `n` bytes, then
/// truncate to exactly `n` added bytes.
pub(crate) fn fill<R: Rng>(out: &mut String, n: usize, rng: &mut R) {
    let target = out.len() + n;
    while out.len() < target {
        if !out.is_empty() && !out.ends_with(' ') && !out.ends_with('\n') {
            out.push(' ');
        }
        out.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    out.truncate(target);
}
