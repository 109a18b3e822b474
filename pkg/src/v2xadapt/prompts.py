"""Snow/fog transformation prompts and the client side of image generation.

The generator itself is an external service reached through a ``Transport``.
A deterministic :class:`MockTransport` ships with the package; an HTTP
transport posts the same JSON payload to a configurable endpoint.
"""
from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from .errors import ConfigError, ProtocolError

log = logging.getLogger(__name__)

CAMERAS = {
    "vehicle_front": "ego vehicle front camera",
    "infrastructure": "infrastructure camera",
}
CAMERA_ALIASES = {"vehicle": "vehicle_front", "infra": "infrastructure"}
WEATHER_LABELS = {"snow": 1, "fog": 2}

_SYSTEM = (
    "You are a professional image transformation specialist for autonomous driving "
    "scenarios. Create photorealistic {weather} transformations with accurate {weather} "
    "physics and lighting effects."
)


@dataclass(frozen=True)
class PromptTemplate:
    weather: str
    system_text: str
    intro: str  # contains the {camera} placeholder
    transformations: tuple
    specifications: tuple
    closing: str

    def render(self, camera: str) -> dict:
        user = "\n".join([
            self.intro.format(camera=CAMERAS[camera]),
            "",
            "Apply the following transformations:",
            *(f"- {b}" for b in self.transformations),
            "",
            "Technical specifications:",
            *(f"- {b}" for b in self.specifications),
            "",
            self.closing,
        ])
        return {"system": self.system_text, "user": user}


SNOW = PromptTemplate(
    weather="snow",
    system_text=_SYSTEM.format(weather="snow"),
    intro=("Please transform this image captured by the {camera} into a realistic heavy snow "
           "scene for autonomous driving perception evaluation."),
    transformations=(
        "Add falling snow particles of varying sizes throughout the image;",
        "Create snow accumulation on appropriate horizontal surfaces (road edges, vehicle tops);",
        "Apply snow coverage to roadside areas, signs, and infrastructure;",
        "Reduce road marking visibility with partial snow coverage on the roadway;",
        "Add appropriate brightness/reflection changes due to snow's high albedo;",
        "Create realistic snow flurry effects that partially obscure distant objects;",
        "Add snow buildup on edges of what would be the camera lens/housing;",
        "Introduce glare effects where light sources interact with falling snow.",
    ),
    specifications=(
        "Maintain original image resolution and aspect ratio;",
        "Ensure realistic snow physics (size, distribution, accumulation patterns);",
        "Apply proper light reflectance properties of snow surfaces;",
        "Create realistic road conditions with tire tracks where appropriate;",
        "Adjust overall scene brightness and contrast to account for snow's reflective properties;",
        "Ensure snow distribution follows physical laws (more on horizontal surfaces, less on vertical);",
        "Add subtle blue tint to shadows in snow areas;",
        "Create a realistic depth effect with denser snow appearance in the distance.",
    ),
    closing=("This transformed image will help expand the dataset with realistic snowy driving "
             "scenarios, dedicated to enhancing model performance in challenging winter conditions."),
)

FOG = PromptTemplate(
    weather="fog",
    system_text=_SYSTEM.format(weather="fog"),
    intro=("Please transform this image captured by the {camera} into a realistic dense fog "
           "scene for autonomous driving perception evaluation."),
    transformations=(
        "Add realistic fog effect with visibility reduced to approximately 30-50 meters;",
        "Create a gradual fog density that increases with distance from camera;",
        "Reduce contrast and color saturation throughout the image;",
        "Add light diffusion effects around bright objects (lights, signals);",
        "Maintain the structural integrity of all key elements (vehicles, pedestrians, roads, signs);",
        "Ensure that closer objects remain more visible than distant ones;",
        "Add subtle light halos where applicable (headlights, traffic signals);",
        "Apply a slight uniform brightening effect to simulate light scattering in fog.",
    ),
    specifications=(
        "Maintain original image resolution and aspect ratio;",
        "Ensure the fog effect follows accurate atmospheric physics principles;",
        "Keep road markings partially visible but degraded according to distance;",
        "Apply appropriate fog-induced changes to shadows and reflections;",
        "Create realistic depth-dependent visibility falloff;",
        "Simulate the slight color shift typical in foggy conditions (slightly cooler tones);",
        "Add subtle volumetric lighting effects where light sources interact with fog;",
        "Ensure consistent fog density across the entire frame with proper perspective.",
    ),
    # the source template reuses the snow wording here; kept verbatim
    closing=("This transformed image will help expand the dataset with realistic snowy driving "
             "scenarios, dedicated to enhancing model performance in challenging low-visibility "
             "conditions."),
)

TEMPLATES = {"snow": SNOW, "fog": FOG}


def _weather(weather):
    w = str(weather).lower()
    if w not in TEMPLATES:
        raise ConfigError(f"weather must be snow or fog, got {weather!r}")
    return w


def _camera(camera):
    c = CAMERA_ALIASES.get(str(camera), str(camera))
    if c not in CAMERAS:
        raise ConfigError(f"camera must be one of {sorted(CAMERAS)}, got {camera!r}")
    return c


def build_prompt(weather, camera) -> dict:
    """Rendered ``{"system": ..., "user": ...}`` prompt pair."""
    return TEMPLATES[_weather(weather)].render(_camera(camera))


# --------------------------------------------------------------- requests


@dataclass
class GenerationRequest:
    request_id: str
    scene_id: str
    weather: str
    camera: str
    source_image_ref: str
    rendered_prompt: dict = None

    def __post_init__(self):
        self.weather = _weather(self.weather)
        self.camera = _camera(self.camera)
        if self.rendered_prompt is None:
            self.rendered_prompt = build_prompt(self.weather, self.camera)

    def payload(self):
        return {"request_id": self.request_id, "system": self.rendered_prompt["system"],
                "user": self.rendered_prompt["user"], "image_ref": self.source_image_ref}


def paired_requests(scene_id, weather, vehicle_image, infra_image):
    """One request per view; both share the scene's weather and template."""
    return [
        GenerationRequest(f"{scene_id}:vehicle_front", scene_id, weather, "vehicle_front", vehicle_image),
        GenerationRequest(f"{scene_id}:infrastructure", scene_id, weather, "infrastructure", infra_image),
    ]


@dataclass
class GenerationResult:
    request_id: str
    scene_id: str
    weather: str
    camera: str
    output_image_ref: str | None
    scenario_label: int
    status: str  # "ok" or "failed"
    reason: str | None = None
    attempts: int = 0

    @property
    def ok(self):
        return self.status == "ok"

    def to_dict(self):
        return asdict(self)


class TransientTransportError(Exception):
    """A retryable transport failure (timeout, 5xx, rate limit)."""


class Transport:
    """Sends one JSON payload and returns the decoded JSON response."""

    def send(self, payload: dict) -> dict:
        raise NotImplementedError


@dataclass
class MockTransport(Transport):
    """Deterministic stand-in for the generation service.

    ``fail_first`` makes the first N calls raise a transient error;
    ``always_fail`` fails every call.  Responses are cached by request id, so a
    repeated request returns the identical image reference.
    """

    fail_first: int = 0
    always_fail: bool = False
    malformed: bool = False
    calls: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict)

    def send(self, payload):
        body = json.loads(json.dumps(payload))  # the wire is JSON
        self.calls.append(body["request_id"])
        if self.always_fail or len(self.calls) <= self.fail_first:
            raise TransientTransportError("mock transient failure")
        if self.malformed:
            return {"unexpected": True}
        rid = body["request_id"]
        if rid not in self._cache:
            self._cache[rid] = {"image_ref": f"mock://generated/{rid.replace(':', '/')}.png"}
        return dict(self._cache[rid])


class HttpTransport(Transport):
    def __init__(self, endpoint, timeout=60.0, headers=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.headers = {"Content-Type": "application/json", **(headers or {})}

    def send(self, payload):
        req = urllib.request.Request(self.endpoint, data=json.dumps(payload).encode(),
                                     headers=self.headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code >= 500 or exc.code == 429:
                raise TransientTransportError(f"HTTP {exc.code}") from exc
            raise
        except (urllib.error.URLError, TimeoutError) as exc:
            raise TransientTransportError(str(exc)) from exc
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProtocolError("response is not JSON") from exc


def submit(req: GenerationRequest, transport: Transport, retries: int = 3,
           backoff: float = 0.5, sleep=time.sleep) -> GenerationResult:
    """Send one request, retrying transient failures with exponential backoff."""
    label = WEATHER_LABELS[req.weather]
    attempts, reason = 0, None
    for attempt in range(retries + 1):
        attempts += 1
        try:
            response = transport.send(req.payload())
        except TransientTransportError as exc:
            reason = str(exc)
            log.info("request %s attempt %d failed: %s", req.request_id, attempts, reason)
            if attempt < retries:
                sleep(backoff * 2**attempt)
            continue
        if not isinstance(response, dict):
            raise ProtocolError("response must be a JSON object")
        if "image_ref" in response:
            return GenerationResult(req.request_id, req.scene_id, req.weather, req.camera,
                                    str(response["image_ref"]), label, "ok", None, attempts)
        if "error" in response:
            reason = str(response["error"])
            if attempt < retries:
                sleep(backoff * 2**attempt)
            continue
        raise ProtocolError(f"response carries neither image_ref nor error: {sorted(response)}")
    return GenerationResult(req.request_id, req.scene_id, req.weather, req.camera, None,
                            label, "failed", reason, attempts)


def submit_many(requests, transport, retries=3, backoff=0.5, max_in_flight=4, sleep=time.sleep):
    """Submit concurrently (bounded); results come back in request order."""
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = [pool.submit(submit, r, transport, retries, backoff, sleep) for r in requests]
        return [f.result() for f in futures]


def annotate_manifest(results, descriptions=None):
    """Pair vehicle/infrastructure results per scene into manifest rows.

    Returns ``(rows, errors)``; scenes lacking an ok result for either view are
    reported as errors and produce no row.
    """
    descriptions = descriptions or {}
    by_scene = {}
    for res in results:
        by_scene.setdefault(res.scene_id, {})[res.camera] = res
    rows, errors = [], []
    for scene_id in sorted(by_scene):
        views = by_scene[scene_id]
        veh, inf = views.get("vehicle_front"), views.get("infrastructure")
        missing = [name for name, r in (("vehicle_front", veh), ("infrastructure", inf))
                   if r is None or not r.ok]
        if missing:
            errors.append({"scene_id": scene_id, "error": f"missing or failed views: {missing}"})
            continue
        if veh.weather != inf.weather or veh.scenario_label != inf.scenario_label:
            errors.append({"scene_id": scene_id, "error": "paired views disagree on weather"})
            continue
        rows.append({"scene_id": scene_id, "vehicle_image": veh.output_image_ref,
                     "infra_image": inf.output_image_ref,
                     "description_text": descriptions.get(scene_id, ""),
                     "scenario_label": veh.scenario_label})
    return rows, errors


def load_descriptions(path):
    """Scene descriptions from a JSON-lines file of ``{scene_id, text}`` rows."""
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[str(row["scene_id"])] = row["text"]
    return out
