import { GexClient } from './client';
import { ControlPanel } from './panel';
import { HandSceneView } from './render';
import { UiStore } from './store';

const store = new UiStore();
const wsUrl = `ws://${location.host}/ws`;
const client = new GexClient(wsUrl, store);

const view = new HandSceneView(document.getElementById('view')!);
new ControlPanel(document.getElementById('panel')!, store, client);

store.onChange(() => {
  if (store.scene !== undefined) view.setSceneObject(store.scene);
});

// Render decoupled from message arrival: latest state wins per frame.
function frame(): void {
  if (store.state) view.updateFromState(store.state);
  view.render();
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);

client.connect();
