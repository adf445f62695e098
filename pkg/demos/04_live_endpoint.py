"""
Driving a live endpoint
=======================

Stand up a toy HTTP service on localhost, point the closed-loop driver at
it and summarize what came back. Swap the URL for a real deployment.
"""

import random
import tempfile
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from scenariobench import WorkloadProfile, summarize
from scenariobench.live import run_live


class Toy(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        # images take longer than text, as they would in a real pipeline
        time.sleep(random.expovariate(1 / (0.02 if body == b"image" else 0.004)))
        self.send_response(200)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def log_message(self, *args):
        pass


server = ThreadingHTTPServer(("127.0.0.1", 0), Toy)
threading.Thread(target=server.serve_forever, daemon=True).start()
url = f"http://127.0.0.1:{server.server_address[1]}/query"

payload_dir = Path(tempfile.mkdtemp())
payloads = {}
for q in ("text", "image"):
    payloads[q] = payload_dir / q
    payloads[q].write_bytes(q.encode())

profile = WorkloadProfile("closed", 400, {"text": 0.9, "image": 0.1}, seed=3, users=8,
                          think_time_mean_ms=20.0, warmup_ms=200.0)
traces = run_live(url, profile, payloads)
server.shutdown()

ok = [t for t in traces if not t.failed]
print(f"{len(traces)} requests, {len(traces) - len(ok)} failed")
for q in ("text", "image"):
    s = summarize([t for t in ok if t.query_type == q])["overall"]
    print(f"{q:>5}: n={s.count} mean={s.mean_ms:.1f} ms p99={s.p99_ms:.1f} ms")
