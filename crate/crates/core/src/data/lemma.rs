//! Rule-based English plural merging.
//!
//! Suffix rules with an exception table: `-ies` becomes `-y`, `-es` is
//! dropped after a sibilant stem (ss/x/z/ch/sh), a bare `-s` is dropped
//! otherwise. Irregular plurals map through a fixed table and singular
//! words the rules would mangle ("news", "series", ...) pass through
//! untouched. Every output is a fixed point, so applying the mapping twice
//! changes nothing.

/// Irregular plural -> singular, including `-es` words whose stem keeps the
/// trailing vowel or sibilant.
const IRREGULAR: &[(&str, &str)] = &[
    ("bonuses", "bonus"),
    ("buses", "bus"),
    ("cactuses", "cactus"),
    ("campuses", "campus"),
    ("children", "child"),
    ("choruses", "chorus"),
    ("circuses", "circus"),
    ("echoes", "echo"),
    ("feet", "foot"),
    ("focuses", "focus"),
    ("gases", "gas"),
    ("geese", "goose"),
    ("halves", "half"),
    ("heroes", "hero"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("lenses", "lens"),
    ("lives", "life"),
    ("men", "man"),
    ("mice", "mouse"),
    ("movies", "movie"),
    ("people", "people"),
    ("potatoes", "potato"),
    ("scarves", "scarf"),
    ("statuses", "status"),
    ("teeth", "tooth"),
    ("tomatoes", "tomato"),
    ("viruses", "virus"),
    ("volcanoes", "volcano"),
    ("wives", "wife"),
    ("wolves", "wolf"),
    ("women", "woman"),
];

/// Singular words the suffix rules would otherwise mangle. Words ending in
/// `ss`, `us`, or `is` are already safe from the rules below.
const KEEP_AS_IS: &[&str] = &[
    "canvas", "chaos", "christmas", "cosmos", "lens", "news", "series", "species",
    "texas", "vegas",
];

/// Map a lowercase tag to its merged singular form. Idempotent.
pub fn lemmatize(tag: &str) -> String {
    if let Some((_, singular)) = IRREGULAR.iter().find(|(plural, _)| *plural == tag) {
        return (*singular).to_string();
    }
    if KEEP_AS_IS.contains(&tag) {
        return tag.to_string();
    }
    if let Some(stem) = tag.strip_suffix("ies") {
        // "ties"/"pies" are tie/pie + s, not *ty/*py.
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = tag.strip_suffix("es") {
        if ["ss", "x", "z", "ch", "sh"].iter().any(|suf| stem.ends_with(suf)) {
            return stem.to_string();
        }
    }
    if tag.len() > 3
        && !tag.ends_with("ss")
        && !tag.ends_with("us")
        && !tag.ends_with("is")
    {
        if let Some(stem) = tag.strip_suffix('s') {
            return stem.to_string();
        }
    }
    tag.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_plural_drops_s() {
        assert_eq!(lemmatize("cars"), "car");
        assert_eq!(lemmatize("sunsets"), "sunset");
        assert_eq!(lemmatize("photos"), "photo");
    }

    #[test]
    fn ies_becomes_y() {
        assert_eq!(lemmatize("parties"), "party");
        assert_eq!(lemmatize("cities"), "city");
        assert_eq!(lemmatize("skies"), "sky");
    }

    #[test]
    fn short_ies_words_keep_the_e() {
        assert_eq!(lemmatize("ties"), "tie");
        assert_eq!(lemmatize("pies"), "pie");
    }

    #[test]
    fn sibilant_es_is_dropped() {
        assert_eq!(lemmatize("boxes"), "box");
        assert_eq!(lemmatize("beaches"), "beach");
        assert_eq!(lemmatize("glasses"), "glass");
        assert_eq!(lemmatize("dishes"), "dish");
    }

    #[test]
    fn single_s_stems_keep_their_e() {
        assert_eq!(lemmatize("houses"), "house");
        assert_eq!(lemmatize("horses"), "horse");
        assert_eq!(lemmatize("cases"), "case");
        assert_eq!(lemmatize("roses"), "rose");
    }

    #[test]
    fn exceptions_pass_through() {
        for w in ["glass", "news", "chess", "bus", "series", "lens", "virus", "tennis"] {
            assert_eq!(lemmatize(w), w);
        }
    }

    #[test]
    fn irregulars_map_through_table() {
        assert_eq!(lemmatize("children"), "child");
        assert_eq!(lemmatize("leaves"), "leaf");
        assert_eq!(lemmatize("buses"), "bus");
        assert_eq!(lemmatize("heroes"), "hero");
        assert_eq!(lemmatize("people"), "people");
    }

    #[test]
    fn short_words_are_untouched() {
        for w in ["is", "as", "its", "gas", "s"] {
            assert_eq!(lemmatize(w), w);
        }
    }

    #[test]
    fn idempotent_over_many_forms() {
        let words = [
            "cars", "car", "parties", "party", "boxes", "box", "glasses", "glass",
            "children", "child", "wolves", "wolf", "beaches", "beach", "photos",
            "houses", "buses", "heroes", "shoes", "series", "skies", "news",
            "analysis", "ellipses", "axes", "quizzes", "people",
        ];
        for w in words {
            let once = lemmatize(w);
            assert_eq!(lemmatize(&once), once, "word {w} -> {once}");
        }
    }
}
