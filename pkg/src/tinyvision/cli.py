"""Command-line interface.

Every device-facing verb is a thin wrapper over DeviceClient, so the bytes
on the wire are exactly what the protocol module produces. Training and
export verbs drive the core modules directly, no service required.
"""

import argparse
import json
import sys
import threading
import time
from pathlib import Path

from . import codec, dataset as ds, model
from .client import DeviceClientError, connect
from .protocol import HeatmapFrame, heatmap_to_rgb
from .simulator import DeviceServer, VirtualCamera, VirtualDevice, serve_tcp
from .transport import open_pty

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_RETRYABLE = 3    # transient failure, safe to re-run the same command


class CliError(Exception):
    pass


def _fail(message: str, *, retryable: bool = False) -> int:
    prefix = "error (retryable, try again)" if retryable else "error"
    print(f"{prefix}: {message}", file=sys.stderr)
    return EXIT_RETRYABLE if retryable else EXIT_ERROR


def _open_link(args):
    try:
        return connect(args.endpoint, sd_root=args.root,
                       camera_dir=getattr(args, "camera_dir", None))
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot open endpoint {args.endpoint!r}: {exc}")


def _device_args(parser):
    parser.add_argument("--endpoint", default="sim",
                        help="sim | tcp:HOST:PORT | serial:/dev/PATH "
                             "(default: sim)")
    parser.add_argument("--root", type=Path, default=None,
                        help="virtual SD root for the sim endpoint")
    parser.add_argument("--camera-dir", type=Path, default=None,
                        help="image folder backing the sim camera")


# ----------------------------------------------------------------------
# sd
# ----------------------------------------------------------------------

def cmd_sd(args) -> int:
    with _open_link(args) as link:
        client = link.client
        if args.verb == "ls":
            for entry in client.sd_list(args.path):
                kind = "D" if entry.is_dir else "F"
                size = "" if entry.size is None else f" {entry.size}"
                print(f"{kind} {entry.name}{size}")
        elif args.verb == "cat":
            sys.stdout.write(client.sd_read_text(args.path))
        elif args.verb == "get":
            data = client.sd_read_bytes(args.path)
            local = args.local or Path(args.path).name
            Path(local).write_bytes(data)
            print(f"{args.path} -> {local} ({len(data)}B)")
        elif args.verb == "put":
            data = Path(args.local).read_bytes()
            message = client.sd_write(args.path, data)
            print(message)
        elif args.verb == "rm":
            print(client.sd_delete(args.path))
        elif args.verb == "rmdir":
            print(client.sd_rmdir(args.path))
    return EXIT_OK


# ----------------------------------------------------------------------
# capture
# ----------------------------------------------------------------------

def cmd_capture(args) -> int:
    project = args.project
    config = ds.load_project_config(project)
    if args.label not in config.class_labels:
        return _fail(f"unknown label {args.label!r}; "
                     f"valid: {', '.join(config.class_labels)}")
    if args.source == "device":
        size = args.size if args.size is not None else config.input_size
        count = args.count if args.count is not None else 1
        with _open_link(args) as link:
            for i in range(count):
                data = link.client.capture(size, size, quality=args.quality)
                path = ds.save_capture(data, args.label, project)
                print(f"captured {path} ({len(data)}B)")
    else:
        source = Path(args.source)
        if not source.is_dir():
            return _fail(f"source {source} is not a directory "
                         f"(use 'device' or an image folder)")
        files = sorted(p for p in source.iterdir()
                       if p.suffix.lower() in ds.IMAGE_EXTS)
        if args.count is not None:
            files = files[:args.count]
        for p in files:
            path = ds.save_capture(p.read_bytes(), args.label, project)
            print(f"ingested {p} -> {path}")
        if not files:
            print("no images found")
    counts = ds.class_counts(project, [args.label])
    print(f"{args.label}: {counts[args.label]} images")
    return EXIT_OK


# ----------------------------------------------------------------------
# train / export / confusion
# ----------------------------------------------------------------------

def _write_header_files(project: Path, config, weights) -> None:
    bundle = codec.weights_to_bundle(weights, config.to_header_meta())
    header = project / ds.HEADER_DIR
    header.mkdir(parents=True, exist_ok=True)
    (header / config.weights_file).write_bytes(codec.encode_bin(bundle))
    (header / ds.WEIGHTS_H_NAME).write_text(codec.emit_c_header(bundle))


def cmd_train(args) -> int:
    project = args.project
    config = ds.load_project_config(project)
    images = ds.ingest(project, config)
    if args.holdout:
        images, held = ds.split(images, ds.SplitSpec.fixed(args.holdout,
                                                           seed=args.seed))
        print(f"holding out {len(held)} images for validation")
    epochs = args.epochs if args.epochs is not None else config.target_epochs
    batch = args.batch if args.batch is not None else config.batch_size
    lr = args.lr if args.lr is not None else config.learning_rate
    augment = config.use_augmentation and not args.no_augment
    mode = (model.EpochMode.RANDOM_BATCH if args.mode == "random"
            else model.EpochMode.USE_ALL_DATA)

    weights = model.build_model(config.to_spec(), seed=args.seed)
    state = model.init_train_state(weights, learning_rate=lr, batch_size=batch,
                                   mode=mode, seed=args.seed)
    trainer = model.Trainer(state, images, augment_enabled=augment)
    print(f"training on {len(images)} images, {epochs} epochs, "
          f"batch {batch}, lr {lr}")
    start = time.monotonic()
    trainer.run_epochs(epochs, callback=_print_progress)
    elapsed = time.monotonic() - start
    print(f"done: {state.batch_counter} batches, {state.epoch_counter} epochs "
          f"in {elapsed:.1f}s, final status {state.status().value}")
    _write_header_files(project, config, state.weights)
    print(f"weights written to {project / ds.HEADER_DIR}")
    return EXIT_OK


def _print_progress(step) -> None:
    if step.batch % 10 == 0:
        print(f"batch {step.batch:6d}  epoch {step.epoch:4d}  "
              f"loss {step.loss:.4f}  avg {step.avg_recent_loss:.4f}  "
              f"{step.status.value}")


def cmd_export(args) -> int:
    project = args.project
    config = ds.load_project_config(project)
    bin_path = project / ds.HEADER_DIR / config.weights_file
    if not bin_path.is_file():
        return _fail(f"no weights at {bin_path}; run 'train' first")
    bundle = codec.decode_bin(bin_path.read_bytes())
    weights = codec.bundle_to_weights(bundle)
    _write_header_files(project, config, weights)
    h_path = project / ds.HEADER_DIR / ds.WEIGHTS_H_NAME
    print(f"wrote {bin_path} ({bin_path.stat().st_size}B)")
    print(f"wrote {h_path} ({h_path.stat().st_size}B)")
    return EXIT_OK


def cmd_confusion(args) -> int:
    project = args.project
    config = ds.load_project_config(project)
    bin_path = project / ds.HEADER_DIR / config.weights_file
    if not bin_path.is_file():
        return _fail(f"no weights at {bin_path}; run 'train' first")
    weights = codec.bundle_to_weights(codec.decode_bin(bin_path.read_bytes()))
    images = ds.ingest(project, config)
    matrix = model.confusion_matrix(weights, images)
    labels = config.class_labels
    width = max(len(l) for l in labels) + 2
    print(" " * width + "".join(f"{l:>{width}}" for l in labels))
    for i, label in enumerate(labels):
        row = "".join(f"{int(n):>{width}}" for n in matrix[i])
        print(f"{label:>{width}}{row}")
    correct = int(matrix.trace())
    total = int(matrix.sum())
    if total:
        print(f"accuracy: {correct}/{total} = {correct / total:.1%}")
    return EXIT_OK


# ----------------------------------------------------------------------
# heatmap
# ----------------------------------------------------------------------

def _ansi_render(frame: HeatmapFrame) -> str:
    rgb = heatmap_to_rgb(frame)
    lines = []
    for r in range(frame.rows):
        cells = []
        for c in range(frame.cols):
            off = (r * frame.cols + c) * 3
            cells.append(f"\x1b[48;2;{rgb[off]};{rgb[off+1]};{rgb[off+2]}m  ")
        lines.append("".join(cells) + "\x1b[0m")
    return "\n".join(lines)


def _png_render(frame: HeatmapFrame, path: Path, scale: int = 6) -> None:
    from PIL import Image
    rgb = heatmap_to_rgb(frame)
    im = Image.frombytes("RGB", (frame.cols, frame.rows), rgb)
    im = im.resize((frame.cols * scale, frame.rows * scale), Image.NEAREST)
    im.save(path)


def cmd_heatmap(args) -> int:
    if not args.watch:
        return _fail("pass --watch to stream frames")
    if args.png_dir:
        args.png_dir.mkdir(parents=True, exist_ok=True)
    got: "list[HeatmapFrame]" = []
    event = threading.Event()

    def on_frame(frame: HeatmapFrame) -> None:
        got.append(frame)
        event.set()

    with _open_link(args) as link:
        client = link.client
        client.add_heatmap_listener(on_frame)
        client.heatmap(True)
        count = 0
        try:
            while args.frames is None or count < args.frames:
                if not event.wait(timeout=10.0):
                    return _fail("no heatmap frame within 10s", retryable=True)
                event.clear()
                while got:
                    frame = got.pop(0)
                    count += 1
                    if args.png_dir:
                        out = args.png_dir / f"heatmap_{count:04d}.png"
                        _png_render(frame, out)
                        print(f"frame {count}: {frame.rows}x{frame.cols} -> {out}")
                    else:
                        print(f"frame {count}: {frame.rows}x{frame.cols}")
                        print(_ansi_render(frame))
                    if args.frames is not None and count >= args.frames:
                        break
        except KeyboardInterrupt:
            pass
        finally:
            client.heatmap(False)
    return EXIT_OK


# ----------------------------------------------------------------------
# sim / serve / flash
# ----------------------------------------------------------------------

def cmd_sim(args) -> int:
    device = VirtualDevice(args.root, VirtualCamera(args.camera_dir))
    listen = args.listen
    tick = args.tick / 1000.0
    if listen.startswith("tcp"):
        parts = listen.split(":")
        if len(parts) == 2:
            host, port = "127.0.0.1", int(parts[1])
        elif len(parts) == 3:
            host, port = parts[1], int(parts[2])
        else:
            return _fail(f"bad tcp listen spec {listen!r} "
                         f"(tcp:PORT or tcp:HOST:PORT)")

        def ready(actual_port):
            print(f"simulator listening on tcp:{host}:{actual_port}",
                  flush=True)

        serve_tcp(device, host, port, tick_interval=tick,
                  ready_callback=ready)
    elif listen == "pty":
        transport, slave_path = open_pty()
        print(f"simulator on serial port {slave_path}", flush=True)
        server = DeviceServer(device, transport, auto_tick=True,
                              tick_interval=tick)
        server.start()
        try:
            while server.is_alive():
                server.join(timeout=1.0)
        except KeyboardInterrupt:
            server.stop()
    else:
        return _fail(f"unsupported listen spec {listen!r} (tcp:PORT | pty)")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import run_service
    endpoint = None if args.endpoint == "none" else args.endpoint
    print(f"service on http://127.0.0.1:{args.port} "
          f"(project {args.project}, endpoint {endpoint})", flush=True)
    run_service(args.project, port=args.port, endpoint=endpoint,
                camera_dir=args.camera_dir)
    return EXIT_OK


FLASH_NOTES = """\
Firmware flashing is not handled here. To put the classifier firmware on
the board:

  1. Export weights first:  tinyvision export --project <dir>
  2. Copy <dir>/header/myWeights.h into the firmware sketch directory,
     or copy <dir>/header/ onto the SD card (root /header/).
  3. Build and flash the sketch with your usual ESP32 toolchain
     (Arduino IDE or idf.py/esptool against the board's serial port).

After flashing, this CLI talks to the board over the same serial port:
  tinyvision sd --endpoint serial:/dev/ttyUSB0 ls /
"""


def cmd_flash(args) -> int:
    print(FLASH_NOTES, end="")
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinyvision",
        description="Train, export, and talk to a tiny on-device image "
                    "classifier (or its simulator).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sd", help="SD card operations over the wire protocol")
    p.add_argument("verb", choices=["ls", "cat", "get", "put", "rm", "rmdir"])
    p.add_argument("path", nargs="?", default="/",
                   help="device path (for put: the destination)")
    p.add_argument("local", nargs="?", default=None,
                   help="local file (get: destination, put: source)")
    _device_args(p)
    p.set_defaults(func=cmd_sd)

    p = sub.add_parser("capture", help="collect labeled images")
    p.add_argument("--label", required=True)
    p.add_argument("--count", type=int, default=None,
                   help="device: frames to grab (default 1); "
                        "folder: cap on files (default all)")
    p.add_argument("--source", default="device",
                   help="'device' (CAM_CAPTURE) or a folder of images")
    p.add_argument("--project", type=Path, required=True)
    p.add_argument("--size", type=int, default=None,
                   help="capture edge in pixels (default: config inputSize)")
    p.add_argument("--quality", type=int, default=90)
    _device_args(p)
    p.set_defaults(func=cmd_capture)

    p = sub.add_parser("train", help="train the model on the project dataset")
    p.add_argument("--project", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--mode", choices=["all", "random"], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout", type=int, default=0,
                   help="images per class reserved for validation")
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="rewrite header/ artifacts from "
                                      "stored weights")
    p.add_argument("--project", type=Path, required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("confusion", help="print the confusion matrix")
    p.add_argument("--project", type=Path, required=True)
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser("heatmap", help="stream activation heatmaps")
    p.add_argument("--watch", action="store_true")
    p.add_argument("--png-dir", type=Path, default=None)
    p.add_argument("--frames", type=int, default=None,
                   help="stop after N frames (default: run until ^C)")
    _device_args(p)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("sim", help="run the device simulator")
    p.add_argument("--root", type=Path, required=True,
                   help="directory that backs the virtual SD card")
    p.add_argument("--listen", required=True, help="tcp:PORT | tcp:HOST:PORT | pty")
    p.add_argument("--camera-dir", type=Path, default=None)
    p.add_argument("--tick", type=float, default=160.0,
                   help="inference tick interval in ms")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("serve", help="run the local UI service")
    p.add_argument("--port", type=int, default=8645)
    p.add_argument("--project", type=Path, required=True)
    p.add_argument("--endpoint", default="sim",
                   help="device endpoint, or 'none' to run without one")
    p.add_argument("--camera-dir", type=Path, default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("flash", help="how to get firmware onto the board")
    p.set_defaults(func=cmd_flash)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # sim sd verbs need a sandbox root; default to the project when given
    if getattr(args, "endpoint", None) == "sim" and getattr(args, "root", None) is None:
        args.root = getattr(args, "project", None) or Path.cwd()
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(str(exc))
    except DeviceClientError as exc:
        return _fail(str(exc), retryable=getattr(exc, "retryable", False))
    except ds.DatasetError as exc:
        return _fail(str(exc))
    except codec.ConfigInvalid as exc:
        return _fail(str(exc))
    except codec.WeightCodecError as exc:
        return _fail(str(exc))
    except BrokenPipeError:
        return EXIT_ERROR
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
