"""
Reference recognizer endpoint speaking the external protocol
(POST / with {"prompt"} -> {"text"}). Modes:
    echo      returns the prompt
    identity  returns the text field quoted in a correction prompt, or the prompt itself
    fail      answers HTTP 500, for exercising transport error paths
Run locally with: flask --app "backend_app:create_app('echo')" run
"""
import re
from collections import deque

from flask import Flask, jsonify, request

MODES = ("echo", "identity", "fail")
SEEN_BODIES_LIMIT = 64

# text field of the three correction templates
_TEXT_PATTERNS = (
    re.compile(r"^The following text may contain errors: (?P<text>.*)\. Possible replacements include: ", re.S),
    re.compile(r"^Correct the text: '(?P<text>.*)'\. Use these candidates for guidance: ", re.S),
    re.compile(r"^Original text: (?P<text>.*), candidate words: ", re.S),
)


def extract_text_field(prompt):
    for pat in _TEXT_PATTERNS:
        m = pat.match(prompt)
        if m:
            return m.group("text")
    return prompt


def create_app(mode="echo", seen_limit=SEEN_BODIES_LIMIT):
    if mode not in MODES:
        raise ValueError(f"unknown backend mode {mode!r}")
    app = Flask(__name__)
    app.config["BACKEND_MODE"] = mode
    # most recent raw request bodies
    app.config["SEEN_BODIES"] = deque(maxlen=seen_limit)
    app.json.ensure_ascii = False

    @app.route('/', methods=['POST'])
    def complete():
        app.config["SEEN_BODIES"].append(request.get_data())
        if app.config["BACKEND_MODE"] == "fail":
            return jsonify({'error': 'backend failure'}), 500
        data = request.get_json(silent=True)
        if not isinstance(data, dict) or not isinstance(data.get("prompt"), str):
            return jsonify({'error': 'expected JSON body {"prompt": string}'}), 400
        prompt = data["prompt"]
        if app.config["BACKEND_MODE"] == "identity":
            return jsonify({'text': extract_text_field(prompt)})
        return jsonify({'text': prompt})

    return app
