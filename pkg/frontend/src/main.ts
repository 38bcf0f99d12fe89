import { ApiClient } from "./api";
import { createApp } from "./app";

const root = document.getElementById("app");
if (root) {
  // The UI is served under /ui/; the JSON API lives at the origin root.
  void createApp(root, new ApiClient(""));
}
