"""HTTP service exposing a fitted scene for interactive editing.

Edits are overlays on an immutable base state: the strand decode runs only
when the overlay changes, renders are cached by (camera, edit) key, and a
reset is just clearing the overlay. JSON in, PNG (or JSON) out, CORS open
for the browser UI.
"""

import io
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .raster import Camera

logger = logging.getLogger(__name__)


def png_bytes(img):
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None].repeat(3, axis=2)
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "RGBA" if quant.shape[2] == 4 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(quant, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


class BadRequest(ValueError):
    pass


class Session:
    """Base state plus the current edit overlay and render caches."""

    def __init__(self, state, scene):
        self.state = state
        self.scene = scene
        self.overlay = {"haircut": None, "wind": None}
        self.lock = threading.Lock()
        self._geometry_cache = {}
        self._render_cache = {}

    def edit_key(self):
        return json.dumps(self.overlay, sort_keys=True)

    def set_haircut(self, fraction):
        if not isinstance(fraction, (int, float)) \
                or not 0.0 <= fraction <= 1.0:
            raise BadRequest(f"haircut fraction {fraction!r} outside [0, 1]")
        with self.lock:
            self.overlay["haircut"] = None if fraction == 1.0 \
                else float(fraction)

    def set_wind(self, direction, amplitude, phase):
        try:
            d = np.asarray([float(v) for v in direction], dtype=np.float64)
        except (TypeError, ValueError):
            raise BadRequest("wind direction must be three numbers")
        if d.shape != (3,) or np.linalg.norm(d) < 1e-9:
            raise BadRequest("wind direction must be a nonzero 3-vector")
        d = d / np.linalg.norm(d)
        with self.lock:
            if float(amplitude) == 0.0:
                self.overlay["wind"] = None
            else:
                self.overlay["wind"] = {"direction": list(d),
                                        "amplitude": float(amplitude),
                                        "phase": float(phase)}

    def geometry(self):
        key = self.edit_key()
        with self.lock:
            cached = self._geometry_cache.get(key)
        if cached is not None:
            return cached
        ov = json.loads(key)
        wind = None
        if ov["wind"]:
            wind = (np.asarray(ov["wind"]["direction"]),
                    ov["wind"]["amplitude"], ov["wind"]["phase"])
        world, units = self.state.decode_geometry(haircut=ov["haircut"],
                                                  wind=wind)
        with self.lock:
            self._geometry_cache = {key: (world, units)}  # keep newest only
        return world, units

    def render_png(self, camera_spec):
        cam, cam_key = self.camera_from_spec(camera_spec)
        key = (cam_key, self.edit_key())
        with self.lock:
            hit = self._render_cache.get(key)
        if hit is not None:
            return hit
        world, units = self.geometry()
        out = self.state.render_view(cam, world, units)
        data = png_bytes(out["full"])
        with self.lock:
            if len(self._render_cache) > 32:
                self._render_cache.clear()
            self._render_cache[key] = data
        return data

    def camera_from_spec(self, spec):
        spec = spec or {}
        if "index" in spec:
            idx = spec["index"]
            if not isinstance(idx, int) \
                    or not 0 <= idx < len(self.scene.cameras):
                raise BadRequest(f"camera index {idx!r} out of range")
            return self.scene.cameras[idx], f"index:{idx}"
        if "orbit" in spec:
            orb = spec["orbit"]
            try:
                az = float(orb["azimuth"])
                el = float(orb["elevation"])
                dist = float(orb["distance"])
            except (KeyError, TypeError, ValueError):
                raise BadRequest(
                    "orbit camera needs azimuth, elevation, distance")
            if dist <= 0:
                raise BadRequest("orbit distance must be positive")
            base = self.scene.cameras[0]
            center = self.scene.scalp.center
            a, e = np.radians(az), np.radians(el)
            pos = center + dist * np.array(
                [np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
            cam = Camera.look_at(position=pos, target=center,
                                 up=np.array([0.0, 0.0, 1.0]),
                                 fx=base.fx, fy=base.fy, cx=base.cx,
                                 cy=base.cy, width=base.width,
                                 height=base.height)
            return cam, f"orbit:{az:.4f}:{el:.4f}:{dist:.6f}"
        return self.scene.cameras[0], "index:0"

    def scene_info(self):
        st = self.state
        return {
            "strand_count": int(st.root_uvs.shape[0]),
            "num_segments": int(st.config.num_segments),
            "image_size": int(self.scene.cameras[0].width),
            "textures": {
                "shape": list(st.shape_tex.data.shape),
                "appearance": list(st.appearance_tex.data.shape)},
            "latent_dim": int(st.config.latent_dim),
            "cameras": len(self.scene.cameras),
            "edits": ["haircut", "wind", "latent"],
            "overlay": self.overlay,
        }

    def strand_polylines(self, decimate):
        if decimate < 1:
            raise BadRequest("decimate must be >= 1")
        world, _ = self.geometry()
        sel = world[::decimate]
        return [[[float(c) for c in p] for p in strand[::5]]
                for strand in sel]

    def latent_polyline(self, uv, dim, value):
        from . import kernels
        from .generator import decode
        from .strands import integrate
        from . import autodiff as ad

        try:
            u, v = float(uv[0]), float(uv[1])
            dim = int(dim)
            value = float(value)
        except (TypeError, ValueError, IndexError):
            raise BadRequest("latent edit needs uv [u, v], dim, value")
        if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
            raise BadRequest("uv outside the unit square")
        if not 0 <= dim < self.state.config.latent_dim:
            raise BadRequest(f"latent dim {dim} out of range")
        z = kernels.texture_gather(self.state.shape_tex.data,
                                   np.array([[u, v]]))[0]
        z[dim] = value
        L = self.state.config.num_segments
        ts = np.arange(L) / L
        dirs = decode(self.state.generator, ad.Tensor(z), ts).data
        pts = integrate(ad.Tensor(dirs)).data
        frame = self.scene.scalp.frame_at(np.array([u, v]))
        world = pts @ frame.matrix() + frame.origin
        return [[float(c) for c in p] for p in world]


class Handler(BaseHTTPRequestHandler):
    session = None  # injected by run_server

    def log_message(self, fmt, *args):
        logger.debug("http: " + fmt, *args)

    def _send(self, code, body, ctype="application/json"):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Allow-Methods",
                         "GET, POST, OPTIONS")
        self.end_headers()
        self.wfile.write(body)

    def _json(self, obj, code=200):
        self._send(code, json.dumps(obj).encode("utf-8"))

    def _error(self, code, message):
        self._json({"error": message}, code=code)

    def _body(self):
        length = int(self.headers.get("Content-Length", 0))
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length).decode("utf-8"))
        except json.JSONDecodeError:
            raise BadRequest("request body is not valid JSON")

    def do_OPTIONS(self):
        self._send(204, b"")

    def do_GET(self):
        try:
            path, _, query = self.path.partition("?")
            if path == "/scene":
                self._json(self.session.scene_info())
            elif path == "/strands":
                params = dict(kv.split("=") for kv in query.split("&")
                              if "=" in kv)
                dec = int(params.get("decimate", 4))
                self._json({"strands":
                            self.session.strand_polylines(dec)})
            else:
                self._error(404, f"unknown path {path}")
        except BadRequest as exc:
            self._error(400, str(exc))
        except Exception as exc:
            logger.exception("GET %s failed", self.path)
            self._error(500, f"{type(exc).__name__}: {exc}")

    def do_POST(self):
        try:
            body = self._body()
            if self.path == "/render":
                data = self.session.render_png(body.get("camera"))
                self._send(200, data, ctype="image/png")
            elif self.path == "/edit/haircut":
                self.session.set_haircut(body.get("fraction"))
                self._json({"ok": True, "overlay": self.session.overlay})
            elif self.path == "/edit/wind":
                self.session.set_wind(body.get("direction"),
                                      body.get("amplitude", 0.0),
                                      body.get("phase", 0.0))
                self._json({"ok": True, "overlay": self.session.overlay})
            elif self.path == "/latent":
                poly = self.session.latent_polyline(body.get("uv"),
                                                    body.get("dim"),
                                                    body.get("value"))
                self._json({"polyline": poly})
            else:
                self._error(404, f"unknown path {self.path}")
        except BadRequest as exc:
            self._error(400, str(exc))
        except Exception as exc:
            logger.exception("POST %s failed", self.path)
            self._error(500, f"{type(exc).__name__}: {exc}")


def make_server(state, scene, port=0):
    session = Session(state, scene)
    handler = type("BoundHandler", (Handler,), {"session": session})
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    server.session = session
    return server


def run_server(state, scene, port):
    server = make_server(state, scene, port)
    logger.info("serving on http://127.0.0.1:%d", server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
