import json
import socket
import socketserver
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segnerf.errors import ProtocolError, TransportError
from segnerf.scene import ViewImage
from segnerf.segmenter import (BridgeSegmenter, OracleSegmenter, PromptSet,
                               decode_rle, encode_rle, make_segmenter)
from conftest import small_intrinsics


def blank_view(view_id=0, size=16):
    intr = small_intrinsics(size)
    from segnerf.scene import look_at_pose
    return ViewImage(view_id=view_id, rgb=np.zeros((size, size, 3)),
                     intrinsics=intr, pose=look_at_pose([0, 0, -2], [0, 0, 0]))


class TestRle:
    def test_known_pattern(self):
        bits = np.array([[0, 1, 1], [1, 0, 0]], dtype=bool)
        rle = encode_rle(bits)
        assert rle == {"size": [2, 3], "counts": [1, 3, 2]}
        np.testing.assert_array_equal(decode_rle(rle), bits)

    def test_leading_one_starts_with_zero_count(self):
        rle = encode_rle(np.ones((2, 2), dtype=bool))
        assert rle["counts"] == [0, 4]

    def test_all_zero(self):
        rle = encode_rle(np.zeros((3, 4), dtype=bool))
        assert rle["counts"] == [12]

    @settings(max_examples=50, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
    def test_round_trip_property(self, bits):
        np.testing.assert_array_equal(decode_rle(encode_rle(bits)), bits)

    def test_bad_sum_rejected(self):
        with pytest.raises(ProtocolError):
            decode_rle({"size": [2, 2], "counts": [1, 2]})


class TestPromptSet:
    def test_empty_is_falsy(self):
        assert not PromptSet()
        assert PromptSet(points=((1.0, 2.0, True),))
        assert PromptSet(box=(0, 0, 5, 5))

    def test_out_of_image_prompt_rejected(self):
        view = blank_view(size=16)
        with pytest.raises(ValueError):
            PromptSet(points=((20.0, 3.0, True),)).validate_for(view)

    def test_unordered_box_rejected(self):
        with pytest.raises(ValueError):
            PromptSet(box=(5, 0, 1, 5))


class TestOracleSegmenter:
    def test_delegates_to_instance_map(self, sphere_scene):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        view = rendered.views[0]
        imap = rendered.instance_map(view.view_id)
        ys, xs = np.nonzero(imap == 1)
        prompts = PromptSet(points=((float(xs[0]), float(ys[0]), True),))
        mask = seg.segment(view, prompts)
        np.testing.assert_array_equal(mask.bits, imap == 1)

    def test_detect_uses_label_map(self, sphere_scene):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered, label_map={"red ball": 1})
        boxes = seg.detect_boxes(rendered.views[0], "red ball")
        assert len(boxes) == 1 and boxes[0][1] == 1.0
        assert seg.detect_boxes(rendered.views[0], "unknown thing") == []

    def test_empty_prompts_rejected(self, sphere_scene):
        _, rendered = sphere_scene
        with pytest.raises(ValueError):
            OracleSegmenter(rendered).segment(rendered.views[0], PromptSet())


# ---------------------------------------------------------------------------
# scripted NDJSON servers for the bridge client
# ---------------------------------------------------------------------------

class _ScriptedHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            req = json.loads(line)
            reply = self.server.respond(req)
            if reply is None:
                return
            if reply == "stall":
                threading.Event().wait(10.0)
                return
            if isinstance(reply, str):
                self.wfile.write(reply.encode() + b"\n")
            else:
                self.wfile.write(json.dumps(reply).encode() + b"\n")
            self.wfile.flush()


def _serve(respond):
    server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), _ScriptedHandler)
    server.daemon_threads = True
    server.respond = respond
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"127.0.0.1:{server.server_address[1]}"


@pytest.fixture
def scripted_server():
    servers = []

    def start(respond):
        server, endpoint = _serve(respond)
        servers.append(server)
        return endpoint

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()


def well_behaved(req):
    if req["op"] == "hello":
        return {"id": req["id"], "proto": 1}
    if req["op"] == "segment":
        bits = np.zeros((16, 16), dtype=bool)
        bits[4:9, 5:11] = True
        return {"id": req["id"], "mask": encode_rle(bits), "score": 0.875}
    if req["op"] == "detect":
        return {"id": req["id"], "boxes": [
            {"xyxy": [1, 2, 6, 7], "score": 0.4},
            {"xyxy": [3, 3, 9, 9], "score": 0.9}]}
    return {"id": req.get("id"), "error": {"code": "bad-op", "message": "?"}}


class TestBridgeSegmenter:
    def test_segment_round_trip(self, scripted_server):
        endpoint = scripted_server(well_behaved)
        with BridgeSegmenter(endpoint, timeout=5.0) as seg:
            mask = seg.segment(blank_view(), PromptSet(points=((3.0, 3.0, True),)))
        assert mask.bits.sum() == 5 * 6
        assert mask.bits[4, 5] and not mask.bits[3, 5]
        assert mask.score == 0.875

    def test_detect_sorted_by_score(self, scripted_server):
        endpoint = scripted_server(well_behaved)
        with BridgeSegmenter(endpoint, timeout=5.0) as seg:
            boxes = seg.detect_boxes(blank_view(), "thing")
        assert [s for _, s in boxes] == [0.9, 0.4]
        assert boxes[0][0] == (3.0, 3.0, 9.0, 9.0)

    def test_connection_refused_is_transport_error(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            free_port = s.getsockname()[1]
        with pytest.raises(TransportError):
            BridgeSegmenter(f"127.0.0.1:{free_port}", timeout=1.0)

    def test_stalling_server_times_out(self, scripted_server):
        endpoint = scripted_server(lambda req: "stall")
        with pytest.raises(TransportError):
            BridgeSegmenter(endpoint, timeout=0.3)

    def test_closed_mid_request_is_transport_error(self, scripted_server):
        calls = []

        def respond(req):
            calls.append(req)
            if req["op"] == "hello":
                return {"id": req["id"], "proto": 1}
            return None  # drop the connection
        endpoint = scripted_server(respond)
        seg = BridgeSegmenter(endpoint, timeout=5.0)
        with pytest.raises(TransportError):
            seg.segment(blank_view(), PromptSet(points=((1.0, 1.0, True),)))

    def test_non_json_reply_is_protocol_error(self, scripted_server):
        endpoint = scripted_server(lambda req: "this is not json")
        with pytest.raises(ProtocolError):
            BridgeSegmenter(endpoint, timeout=5.0)

    def test_wrong_proto_rejected(self, scripted_server):
        endpoint = scripted_server(lambda req: {"id": req["id"], "proto": 2})
        with pytest.raises(ProtocolError):
            BridgeSegmenter(endpoint, timeout=5.0)

    def test_mismatched_id_is_protocol_error(self, scripted_server):
        def respond(req):
            if req["op"] == "hello":
                return {"id": req["id"], "proto": 1}
            return {"id": 999, "mask": encode_rle(np.zeros((16, 16), bool)),
                    "score": 1.0}
        endpoint = scripted_server(respond)
        seg = BridgeSegmenter(endpoint, timeout=5.0)
        with pytest.raises(ProtocolError):
            seg.segment(blank_view(), PromptSet(points=((1.0, 1.0, True),)))

    def test_error_reply_is_protocol_error(self, scripted_server):
        def respond(req):
            if req["op"] == "hello":
                return {"id": req["id"], "proto": 1}
            return {"id": None, "error": {"code": "no-mask",
                                          "message": "nothing there"}}
        endpoint = scripted_server(respond)
        seg = BridgeSegmenter(endpoint, timeout=5.0)
        with pytest.raises(ProtocolError, match="no-mask"):
            seg.segment(blank_view(), PromptSet(points=((1.0, 1.0, True),)))

    def test_wrong_mask_shape_is_protocol_error(self, scripted_server):
        def respond(req):
            if req["op"] == "hello":
                return {"id": req["id"], "proto": 1}
            return {"id": req["id"], "mask": encode_rle(np.zeros((8, 8), bool)),
                    "score": 1.0}
        endpoint = scripted_server(respond)
        seg = BridgeSegmenter(endpoint, timeout=5.0)
        with pytest.raises(ProtocolError, match="shape"):
            seg.segment(blank_view(size=16), PromptSet(points=((1.0, 1.0, True),)))


class TestMakeSegmenter:
    def test_oracle_requires_scene(self):
        with pytest.raises(ValueError):
            make_segmenter("oracle")

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            make_segmenter("nonsense")
