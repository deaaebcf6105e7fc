// Browser entry point: wires the page against the service at QF_BASE_URL
// (same origin by default).

import { ApiClient } from "./api.js";
import { setupApp } from "./main.js";

const client = new ApiClient(
  (window as Window & { QF_BASE_URL?: string }).QF_BASE_URL ?? "",
);
const handles = setupApp(document, client);
void handles.refreshSources();
