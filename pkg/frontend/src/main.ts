import { ApiClient } from "./api.js";
import { ReviewApp } from "./app.js";

// Served by the API process under /ui, so the API base is the same origin.
const base = window.location.pathname.startsWith("/ui") ? "" : "http://127.0.0.1:8000";

document.addEventListener("DOMContentLoaded", () => {
  const app = new ReviewApp(new ApiClient(base), document.getElementById("app")!);
  void app.refresh();
  setInterval(() => void app.refresh(), 15000);
});
