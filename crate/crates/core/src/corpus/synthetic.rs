//! Deterministic corpora for demos, tests and desk-scale training runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Item;

/// Ten hand-written items. Exactly two carry the `jazz` tag, and no other
/// item mentions jazz anywhere.
pub fn fixture_corpus() -> Vec<Item> {
    let item = |id: &str, title: &str, entities: &[&str], description: &str| {
        Item::new(id, title)
            .with_entities(entities.iter().copied())
            .with_description(description)
    };
    vec![
        item(
            "v01",
            "Top Jazz Standards",
            &["jazz", "saxophone"],
            "Classic tunes from the golden age of swing.",
        ),
        item(
            "v02",
            "Late Night Jazz Piano",
            &["jazz", "piano"],
            "Slow piano trios for winding down.",
        ),
        item(
            "v03",
            "Classic Rock Anthems",
            &["rock", "guitar"],
            "Stadium guitar solos and big choruses.",
        ),
        item(
            "v04",
            "Easy Vegetarian Dinners",
            &["cooking", "vegetarian"],
            "Five weeknight meals without meat.",
        ),
        item(
            "v05",
            "Creamy Carbonara Recipe",
            &["cooking", "pasta"],
            "A Roman pasta classic with egg and cheese.",
        ),
        item(
            "v06",
            "Beginner Watercolor Painting",
            &["painting", "art"],
            "Brush basics and color mixing.",
        ),
        item(
            "v07",
            "Speedrunning Retro Games",
            &["video games", "speedrun"],
            "Frame-perfect tricks in old platformers.",
        ),
        item(
            "v08",
            "Morning Yoga Flow",
            &["yoga", "fitness"],
            "A gentle twenty minute stretch.",
        ),
        item(
            "v09",
            "Upbeat Pop Workout Mix",
            &["pop", "workout"],
            "High energy songs for the gym.",
        ),
        item(
            "v10",
            "Grilled Fish Tacos",
            &["cooking", "seafood"],
            "Charred fish, slaw and lime crema.",
        ),
    ]
}

pub(crate) const TOPICS: &[(&str, &[&str])] = &[
    (
        "jazz",
        &[
            "saxophone",
            "trumpet",
            "bebop",
            "swing",
            "improvisation",
            "bigband",
            "coltrane",
            "standards",
            "scat",
            "fusion",
            "trio",
            "ballad",
        ],
    ),
    (
        "rock",
        &[
            "guitar",
            "drums",
            "riff",
            "anthem",
            "grunge",
            "punk",
            "acoustic",
            "amplifier",
            "stadium",
            "ballad",
            "solo",
            "bassline",
        ],
    ),
    (
        "cooking",
        &[
            "pasta",
            "curry",
            "grilling",
            "vegetarian",
            "seafood",
            "dumplings",
            "knife",
            "sauce",
            "noodles",
            "stew",
            "tacos",
            "risotto",
        ],
    ),
    (
        "baking",
        &[
            "sourdough",
            "croissant",
            "cake",
            "cookies",
            "pastry",
            "frosting",
            "muffins",
            "bread",
            "tart",
            "macarons",
            "brioche",
            "pie",
        ],
    ),
    (
        "painting",
        &[
            "watercolor",
            "acrylic",
            "portrait",
            "landscape",
            "oil",
            "brush",
            "canvas",
            "sketching",
            "abstract",
            "mural",
            "palette",
            "gouache",
        ],
    ),
    (
        "gaming",
        &[
            "speedrun",
            "platformer",
            "strategy",
            "esports",
            "minecraft",
            "retro",
            "puzzle",
            "shooter",
            "rpg",
            "walkthrough",
            "boss",
            "multiplayer",
        ],
    ),
    (
        "yoga",
        &[
            "stretching",
            "meditation",
            "vinyasa",
            "breathing",
            "flexibility",
            "balance",
            "hatha",
            "mindfulness",
            "posture",
            "restorative",
            "morning",
            "core",
        ],
    ),
    (
        "fitness",
        &[
            "workout",
            "cardio",
            "strength",
            "hiit",
            "running",
            "kettlebell",
            "squats",
            "pushups",
            "endurance",
            "marathon",
            "cycling",
            "rowing",
        ],
    ),
    (
        "science",
        &[
            "physics",
            "chemistry",
            "astronomy",
            "biology",
            "experiment",
            "telescope",
            "molecules",
            "quantum",
            "fossils",
            "volcano",
            "genetics",
            "rockets",
        ],
    ),
    (
        "travel",
        &[
            "backpacking",
            "japan",
            "italy",
            "roadtrip",
            "hostel",
            "island",
            "mountains",
            "desert",
            "museum",
            "street",
            "camping",
            "cruise",
        ],
    ),
    (
        "gardening",
        &[
            "tomatoes",
            "compost",
            "succulents",
            "pruning",
            "seedlings",
            "orchids",
            "herbs",
            "soil",
            "raised",
            "bonsai",
            "roses",
            "greenhouse",
        ],
    ),
    (
        "history",
        &[
            "rome",
            "egypt",
            "medieval",
            "vikings",
            "samurai",
            "pharaohs",
            "castles",
            "empire",
            "revolution",
            "archaeology",
            "battle",
            "dynasty",
        ],
    ),
    (
        "comedy",
        &[
            "standup",
            "sketch",
            "improv",
            "parody",
            "roast",
            "sitcom",
            "pranks",
            "satire",
            "bloopers",
            "impressions",
            "jokes",
            "skit",
        ],
    ),
    (
        "soccer",
        &[
            "goals",
            "dribbling",
            "penalty",
            "worldcup",
            "midfield",
            "goalkeeper",
            "freekick",
            "tactics",
            "highlights",
            "derby",
            "striker",
            "league",
        ],
    ),
    (
        "chess",
        &[
            "openings",
            "endgame",
            "gambit",
            "checkmate",
            "blitz",
            "tactics",
            "grandmaster",
            "sicilian",
            "puzzles",
            "sacrifice",
            "rook",
            "bishop",
        ],
    ),
    (
        "photography",
        &[
            "lenses", "portrait", "lighting", "film", "drone", "editing", "aperture", "nightsky",
            "wildlife", "street", "macro", "tripod",
        ],
    ),
    (
        "woodworking",
        &[
            "chisel",
            "joinery",
            "lathe",
            "table",
            "carving",
            "dovetail",
            "plywood",
            "workbench",
            "sanding",
            "cabinet",
            "oak",
            "router",
        ],
    ),
    (
        "classical",
        &[
            "violin",
            "piano",
            "symphony",
            "mozart",
            "beethoven",
            "cello",
            "orchestra",
            "sonata",
            "concerto",
            "opera",
            "bach",
            "quartet",
        ],
    ),
    (
        "hiphop",
        &[
            "rap",
            "beats",
            "freestyle",
            "turntables",
            "lyrics",
            "cypher",
            "sampling",
            "breakdance",
            "mixtape",
            "producer",
            "flow",
            "boombap",
        ],
    ),
    (
        "animals",
        &[
            "puppies",
            "kittens",
            "elephants",
            "penguins",
            "dolphins",
            "horses",
            "owls",
            "foxes",
            "pandas",
            "sharks",
            "parrots",
            "otters",
        ],
    ),
];

const ADJECTIVES: &[&str] = &[
    "Relaxing",
    "Ultimate",
    "Beginner",
    "Advanced",
    "Quick",
    "Classic",
    "Modern",
    "Essential",
    "Surprising",
    "Epic",
    "Cozy",
    "Complete",
    "Simple",
    "Legendary",
    "Hidden",
    "Weekend",
];

const FORMATS: &[&str] = &[
    "Guide",
    "Session",
    "Highlights",
    "Tutorial",
    "Compilation",
    "Marathon",
    "Showcase",
    "Lesson",
    "Documentary",
    "Challenge",
    "Breakdown",
    "Journey",
];

/// The topic words the generator draws from.
pub fn topic_words() -> Vec<&'static str> {
    TOPICS.iter().map(|(t, _)| *t).collect()
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// `n` synthetic items with ids `x0000`…; each item has one topic and two
/// topic-specific entities.
pub fn generate(n: usize, seed: u64) -> Vec<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (topic, pool) = TOPICS[rng.random_range(0..TOPICS.len())];
            let picks: Vec<&str> = pool.choose_multiple(&mut rng, 2).copied().collect();
            let adjective = ADJECTIVES.choose(&mut rng).expect("non-empty");
            let format = FORMATS.choose(&mut rng).expect("non-empty");
            let title = format!("{adjective} {} {format}", title_case(picks[0]));
            let description = format!(
                "A {} {} about {} and {} for fans of {topic}.",
                adjective.to_lowercase(),
                format.to_lowercase(),
                picks[0],
                picks[1]
            );
            Item::new(format!("x{i:04}"), title)
                .with_entities([topic, picks[0], picks[1]])
                .with_description(description)
        })
        .collect()
}
