import { createApp } from "./app.js";
import { MediaDevicesCamera } from "./camera.js";

// Served from disk the page has no useful origin, so the API base is a
// query parameter with the service's default port as fallback.
const base =
  new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8645";

const app = createApp({ base, camera: new MediaDevicesCamera() });
document.getElementById("app")?.appendChild(app.el);
void app.init();
