//! Stock prompt templates. Slot names here are part of the fixture contract:
//! renaming one changes every digest that uses it.

use super::PromptTemplate;

pub const DIALOGUE_PLAN: &str = "dialogue_plan";
pub const DIALOGUE_GROUNDED_RESPONSE: &str = "dialogue_grounded_response";
pub const CONTEXT_SUMMARY: &str = "context_summary";
pub const RANK_ITEM: &str = "rank_item";
pub const ITEM_SUMMARY: &str = "item_summary";
pub const USER_SIMULATOR: &str = "user_simulator";

const DIALOGUE_PLAN_TEXT: &str = "\
You are a friendly assistant that helps people find videos to watch.
Write your next output one line at a time. Every line starts with a prefix:
Context: a note about what the user currently wants
Reasoning: a step of reasoning about what to do next
Memory: a lasting fact about the user that is worth remembering across sessions
Request: <search query> fetches recommendations for the query
Response: <message> is shown to the user
End with exactly one Request: or Response: line.

{examples}

{profile}
{conversation}
";

const DIALOGUE_PLAN_EXAMPLES: [&str; 2] = [
    "\
User: I need something to watch while I cook tonight
Context: user wants background videos while cooking
Reasoning: the request is broad, so ask what kind of content they like
Response: Happy to help! Do you want cooking tutorials, music, or something else?",
    "\
User profile: I am vegetarian
User: show me some easy dinner recipes, I never eat meat
Memory: I do not eat meat
Context: user wants easy vegetarian dinner recipes
Request: easy vegetarian dinner recipes",
];

const GROUNDED_RESPONSE_TEXT: &str = "\
You just searched for \"{query}\" and found the videos below, each with a reason it fits.
Write one Response: line that introduces the videos to the user.

Videos:
{slate}

{conversation}
";

const CONTEXT_SUMMARY_TEXT: &str = "\
Summarize in one or two sentences what the user is looking for.

{conversation}
Summary:";

const RANK_ITEM_TEXT: &str = "\
Decide how well a video fits what the user wants.
First write a Reasoning: line explaining your judgement, then a Score: line
with exactly one of: terrible fit, poor fit, acceptable fit, good fit, excellent fit.

User wants: {context}
Video: {title}
About the video: {item}
";

const ITEM_SUMMARY_TEXT: &str = "\
Summarize this video in at most three sentences.

Title: {title}
Entities: {entities}
Description: {description}
Transcript excerpt: {transcript}
Comments: {comments}
Summary:";

const USER_SIMULATOR_TEXT: &str = "\
You are role-playing a person chatting with a video recommendation assistant.
{preamble}
Stay in character and write only your next message.

{conversation}
{intent}
User:";

pub fn default_templates() -> Vec<PromptTemplate> {
    let parse =
        |name: &str, text: &str| PromptTemplate::parse(name, text).expect("stock template parses");
    vec![
        parse(DIALOGUE_PLAN, DIALOGUE_PLAN_TEXT).with_examples(DIALOGUE_PLAN_EXAMPLES),
        parse(DIALOGUE_GROUNDED_RESPONSE, GROUNDED_RESPONSE_TEXT),
        parse(CONTEXT_SUMMARY, CONTEXT_SUMMARY_TEXT),
        parse(RANK_ITEM, RANK_ITEM_TEXT),
        parse(ITEM_SUMMARY, ITEM_SUMMARY_TEXT),
        parse(USER_SIMULATOR, USER_SIMULATOR_TEXT),
    ]
}
