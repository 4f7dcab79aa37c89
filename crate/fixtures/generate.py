#!/usr/bin/env python3
"""Regenerates the bundled synthetic datasets.

Output is fully determined by the seeds below; rerunning rewrites identical files.

  snips_tiny/   32 / 8 / 8 utterances, SNIPS directory layout
  snips_synth/  600 / 100 / 100 utterances, SNIPS directory layout
  conll_tiny/   CoNLL-2003 column format
  sst2_tiny/    tab-separated sentence / 0-1 label with header
"""

import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent

VALUES = {
    "artist": ["miles davis", "adele", "the beatles", "nina simone", "daft punk", "john coltrane",
               "taylor swift", "bob marley", "radiohead", "ella fitzgerald", "kendrick lamar"],
    "genre": ["jazz", "blues", "reggae", "punk rock", "classical", "hip hop", "soul", "techno"],
    "track": ["blue in green", "hey jude", "feeling good", "one more time", "redemption song",
              "karma police", "giant steps"],
    "album": ["kind of blue", "abbey road", "random access memories", "ok computer", "legend"],
    "service": ["spotify", "deezer", "youtube", "pandora", "itunes"],
    "sort": ["newest", "most popular", "top", "latest"],
    "music_item": ["song", "album", "track", "tune"],
    "year": ["1965", "the seventies", "2001", "the eighties", "1998"],
    "city": ["paris", "new york", "tokyo", "berlin", "san francisco", "cairo", "lima", "oslo"],
    "state": ["ohio", "texas", "california", "maine", "oregon"],
    "condition": ["rainy", "sunny", "snowy", "windy", "cold", "humid"],
    "timeRange": ["tomorrow", "tonight", "next week", "this weekend", "at noon", "on friday evening"],
    "party_size": ["two", "four", "six", "eight", "three"],
    "restaurant_name": ["the olive tree", "blue moon diner", "casa lucia", "golden dragon", "chez marie"],
    "restaurant_type": ["restaurant", "bistro", "pub", "brasserie", "tavern"],
    "cuisine": ["italian", "thai", "mexican", "french", "sushi", "indian"],
    "playlist": ["road trip", "chill vibes", "workout", "sunday morning", "study focus", "party mix"],
    "object_type": ["book", "novel", "textbook", "album", "saga"],
    "rating_value": ["one", "two", "three", "four", "five"],
    "best_rating": ["five", "ten", "six"],
    "object_name": ["the hobbit", "war and peace", "dune", "the silent sea", "moby dick",
                    "the great gatsby", "brave new world"],
    "location_name": ["the grand cinema", "odeon", "the regal theatre", "starlight drive in", "the rex"],
    "movie_type": ["animated movies", "horror films", "documentaries", "comedies"],
}

TEMPLATES = {
    "PlayMusic": [
        "play {artist}",
        "play some {genre} music",
        "play {track} by {artist}",
        "i want to hear {album} on {service}",
        "play the {sort} {music_item} from {year}",
        "can you put on {genre} from {year}",
        "listen to {artist} on {service}",
    ],
    "GetWeather": [
        "what is the weather in {city}",
        "will it be {condition} in {city} {timeRange}",
        "forecast for {state} {timeRange}",
        "is it going to be {condition} {timeRange}",
        "how {condition} will it get in {state}",
        "tell me the weather {timeRange} in {city}",
    ],
    "BookRestaurant": [
        "book a table for {party_size} at {restaurant_name}",
        "reserve a {restaurant_type} in {city} for {party_size} people {timeRange}",
        "i need a table at a {cuisine} {restaurant_type} {timeRange}",
        "book {restaurant_name} for {party_size} {timeRange}",
        "find me a {cuisine} {restaurant_type} in {state}",
    ],
    "AddToPlaylist": [
        "add {artist} to my {playlist} playlist",
        "add this {music_item} to {playlist}",
        "put {track} on the {playlist} list",
        "include {track} by {artist} in {playlist}",
        "save this {music_item} to my {playlist} collection",
    ],
    "RateBook": [
        "rate this {object_type} {rating_value} out of {best_rating}",
        "give {object_name} {rating_value} stars",
        "i rate {object_name} a {rating_value}",
        "give the current {object_type} {rating_value} points out of {best_rating}",
        "rate {object_name} {rating_value} of {best_rating}",
    ],
    "SearchCreativeWork": [
        "find the {object_type} {object_name}",
        "search for the {object_type} called {object_name}",
        "show me {object_name}",
        "where can i find {object_name}",
        "look up the {object_type} {object_name} by {artist}",
    ],
    "SearchScreeningEvent": [
        "what movies are playing at {location_name} {timeRange}",
        "find {movie_type} near me",
        "show the schedule for {object_name} at {location_name}",
        "which {movie_type} are showing {timeRange}",
        "when is {object_name} playing at {location_name}",
    ],
}


def realize(template, rng):
    tokens, tags = [], []
    for part in template.split():
        if part.startswith("{") and part.endswith("}"):
            slot = part[1:-1]
            words = rng.choice(VALUES[slot]).split()
            tokens.extend(words)
            tags.extend(["B-" + slot] + ["I-" + slot] * (len(words) - 1))
        else:
            tokens.append(part)
            tags.append("O")
    return tokens, tags


def nlu_split(n, rng):
    intents = sorted(TEMPLATES)
    rows = []
    for i in range(n):
        intent = intents[i % len(intents)]
        tokens, tags = realize(rng.choice(TEMPLATES[intent]), rng)
        rows.append((tokens, tags, intent))
    rng.shuffle(rows)
    return rows


def write_nlu(name, sizes, seed):
    rng = random.Random(seed)
    for split, n in zip(("train", "valid", "test"), sizes):
        d = ROOT / name / split
        d.mkdir(parents=True, exist_ok=True)
        rows = nlu_split(n, rng)
        (d / "seq.in").write_text("".join(" ".join(t) + "\n" for t, _, _ in rows))
        (d / "seq.out").write_text("".join(" ".join(g) + "\n" for _, g, _ in rows))
        (d / "label").write_text("".join(i + "\n" for _, _, i in rows))


PEOPLE = ["john smith", "maria garcia", "chen wei", "anna ivanova", "peter", "fatima khan", "obama"]
PLACES = ["london", "germany", "new york", "kenya", "brazil", "lake geneva", "tokyo"]
ORGS = ["reuters", "united nations", "real madrid", "bank of england", "fifa", "toyota"]
MISC = ["olympic games", "english", "world cup", "french", "nobel prize", "euro"]

NER_TEMPLATES = [
    "{PER} visited {LOC} on monday .",
    "{ORG} said {PER} will lead the team .",
    "{PER} won the {MISC} in {LOC} .",
    "shares of {ORG} rose in {LOC} trading .",
    "the {MISC} delegation met {ORG} officials .",
    "{PER} , a spokesman for {ORG} , declined to comment .",
    "rain stopped play in {LOC} .",
    "{ORG} beat {ORG} 2-1 in {LOC} .",
    "police said the man was arrested yesterday .",
    "{PER} speaks fluent {MISC} .",
]
NER_POOLS = {"PER": PEOPLE, "LOC": PLACES, "ORG": ORGS, "MISC": MISC}


def ner_sentence(rng):
    template = rng.choice(NER_TEMPLATES)
    rows = []
    for part in template.split():
        if part.startswith("{") and part.endswith("}"):
            cls = part[1:-1]
            words = rng.choice(NER_POOLS[cls]).split()
            for j, w in enumerate(words):
                rows.append((w.capitalize(), "NNP", "B-NP" if j == 0 else "I-NP", ("B-" if j == 0 else "I-") + cls))
        else:
            rows.append((part, "NN", "I-NP", "O"))
    return rows


def write_conll(seed, sizes):
    rng = random.Random(seed)
    d = ROOT / "conll_tiny"
    d.mkdir(parents=True, exist_ok=True)
    for split, n in zip(("train", "valid", "test"), sizes):
        lines = ["-DOCSTART- -X- -X- O", ""]
        for _ in range(n):
            lines.extend(" ".join(r) for r in ner_sentence(rng))
            lines.append("")
        (d / f"{split}.txt").write_text("\n".join(lines))


POSITIVE = ["great", "wonderful", "moving", "brilliant", "charming", "delightful", "superb"]
NEGATIVE = ["dull", "awful", "tedious", "boring", "clumsy", "painful", "lifeless"]
SUBJECTS = ["the film", "this movie", "the plot", "the acting", "the script", "the soundtrack", "the ending"]
FILLER = ["is", "feels", "was", "seems", "remains"]
INTENSIFIERS = ["", "truly", "really", "quite", "utterly"]


def sentiment_sentence(rng):
    label = rng.randint(0, 1)
    word = rng.choice(POSITIVE if label else NEGATIVE)
    parts = [rng.choice(SUBJECTS), rng.choice(FILLER), rng.choice(INTENSIFIERS), word]
    if rng.random() < 0.4:
        parts += ["and", rng.choice(SUBJECTS), rng.choice(FILLER), rng.choice(POSITIVE if label else NEGATIVE)]
    return " ".join(p for p in parts if p), label


def write_sst2(seed, sizes):
    rng = random.Random(seed)
    d = ROOT / "sst2_tiny"
    d.mkdir(parents=True, exist_ok=True)
    for split, n in zip(("train", "dev", "test"), sizes):
        lines = ["sentence\tlabel"]
        for _ in range(n):
            text, label = sentiment_sentence(rng)
            lines.append(f"{text}\t{label}")
        (d / f"{split}.tsv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    write_nlu("snips_tiny", (32, 8, 8), seed=11)
    write_nlu("snips_synth", (600, 100, 100), seed=12)
    write_conll(seed=13, sizes=(200, 40, 100))
    write_sst2(seed=14, sizes=(200, 40, 100))
